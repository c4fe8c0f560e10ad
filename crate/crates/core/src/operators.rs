//! Objective functions, evaluation accounting and the variation operators
//! (random average crossover, per-feature Gaussian mutation).

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{EmasError, Result};
use crate::model::{EmasParams, Solution};

/// `10n + sum(x_i^2 - 10 cos(2 pi x_i))`; global minimum 0 at the origin.
pub fn rastrigin(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    10.0 * n + x.iter().map(|&xi| xi * xi - 10.0 * (2.0 * PI * xi).cos()).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct Objective {
    name: String,
    dimension: usize,
    lower_bound: f64,
    upper_bound: f64,
    function: fn(&[f64]) -> f64,
}

impl Objective {
    /// Rastrigin on the conventional initialisation box `[-5.12, 5.12]^n`.
    pub fn rastrigin(dimension: usize) -> Self {
        Self {
            name: "rastrigin".to_string(),
            dimension,
            lower_bound: -5.12,
            upper_bound: 5.12,
            function: rastrigin,
        }
    }

    pub fn by_name(name: &str, dimension: usize) -> Result<Self> {
        match name {
            "rastrigin" => Ok(Self::rastrigin(dimension)),
            other => Err(EmasError::UnknownProblem(other.to_string())),
        }
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.lower_bound = lower;
        self.upper_bound = upper;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower_bound, self.upper_bound)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(EmasError::DimensionMismatch { expected: self.dimension, actual: x.len() });
        }
        Ok((self.function)(x))
    }
}

/// Shared tally of objective evaluations. Clones share the same count.
#[derive(Debug, Clone, Default)]
pub struct EvaluationCounter(Arc<AtomicU64>);

impl EvaluationCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Internal fitness of `sol` (the negated objective). Evaluates and caches on
/// first use; cached calls do not touch the counter.
pub fn fitness(objective: &Objective, sol: &mut Solution, counter: &EvaluationCounter) -> Result<f64> {
    if let Some(f) = sol.fitness() {
        return Ok(f);
    }
    let value = objective.evaluate(sol.values())?;
    counter.increment();
    sol.set_fitness(-value);
    Ok(-value)
}

/// An objective plus its counter and the best objective value seen so far.
#[derive(Debug, Clone)]
pub struct Evaluator {
    objective: Objective,
    counter: EvaluationCounter,
    best: f64,
    log: Option<Vec<f64>>,
}

impl Evaluator {
    pub fn new(objective: Objective, counter: EvaluationCounter) -> Self {
        Self { objective, counter, best: f64::INFINITY, log: None }
    }

    /// Keeps every evaluated objective value, for cross-checking reports.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn counter(&self) -> &EvaluationCounter {
        &self.counter
    }

    pub fn evaluations(&self) -> u64 {
        self.counter.get()
    }

    /// Lowest objective value evaluated through this evaluator.
    pub fn best(&self) -> f64 {
        self.best
    }

    /// Folds in a solution evaluated elsewhere (e.g. a migrant).
    pub fn observe(&mut self, objective: f64) {
        if objective < self.best {
            self.best = objective;
        }
    }

    pub fn log(&self) -> Option<&[f64]> {
        self.log.as_deref()
    }

    pub fn evaluate(&mut self, sol: &mut Solution) -> Result<f64> {
        let was_cached = sol.is_initialized();
        let f = fitness(&self.objective, sol, &self.counter)?;
        if !was_cached {
            self.observe(-f);
            if let Some(log) = self.log.as_mut() {
                log.push(-f);
            }
        }
        Ok(f)
    }
}

/// Random average crossover: a uniform point in the box spanned by the parents.
pub fn crossover<R: Rng + ?Sized>(p1: &[f64], p2: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if p1.len() != p2.len() {
        return Err(EmasError::DimensionMismatch { expected: p1.len(), actual: p2.len() });
    }
    Ok(p1
        .iter()
        .zip(p2)
        .map(|(&a, &b)| {
            let u: f64 = rng.random();
            a + u * (b - a)
        })
        .collect())
}

/// Adds `N(0, range^2)` noise to each coordinate independently with
/// probability `rate`. No clamping.
pub fn mutate<R: Rng + ?Sized>(sol: &[f64], rate: f64, range: f64, rng: &mut R) -> Vec<f64> {
    let mut out = sol.to_vec();
    mutate_in_place(&mut out, rate, range, rng);
    out
}

fn mutate_in_place<R: Rng + ?Sized>(values: &mut [f64], rate: f64, range: f64, rng: &mut R) {
    if rate <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, range).expect("mutation range is positive");
    for v in values.iter_mut() {
        if rng.random_bool(rate) {
            *v += normal.sample(rng);
        }
    }
}

/// Child of two parents: start from `p1`, cross over with `p2` with
/// probability `recombination_probability`, then mutate with probability
/// `mutation_probability`. The child is evaluated before it is returned.
pub fn make_child<R: Rng + ?Sized>(
    p1: &Solution,
    p2: &Solution,
    params: &EmasParams,
    evaluator: &mut Evaluator,
    rng: &mut R,
) -> Result<Solution> {
    let mut values = if rng.random_bool(params.recombination_probability) {
        crossover(p1.values(), p2.values(), rng)?
    } else {
        if p1.dimension() != p2.dimension() {
            return Err(EmasError::DimensionMismatch { expected: p1.dimension(), actual: p2.dimension() });
        }
        p1.values().to_vec()
    };
    if rng.random_bool(params.mutation_probability) {
        mutate_in_place(&mut values, params.mutation_rate, params.mutation_range, rng);
    }
    let mut child = Solution::from_values(values);
    evaluator.evaluate(&mut child)?;
    Ok(child)
}

/// Single-parent child for under-filled reproduction meetings: always mutated.
pub fn make_mutant<R: Rng + ?Sized>(
    parent: &Solution,
    params: &EmasParams,
    evaluator: &mut Evaluator,
    rng: &mut R,
) -> Result<Solution> {
    let mut values = parent.values().to_vec();
    mutate_in_place(&mut values, params.mutation_rate, params.mutation_range, rng);
    let mut child = Solution::from_values(values);
    evaluator.evaluate(&mut child)?;
    Ok(child)
}

/// Uniform point in the objective's initialisation box, not yet evaluated.
pub fn random_point<R: Rng + ?Sized>(objective: &Objective, rng: &mut R) -> Solution {
    let (lo, hi) = objective.bounds();
    Solution::from_values((0..objective.dimension()).map(|_| rng.random_range(lo..=hi)).collect())
}

/// Uniform point in the objective's initialisation box, evaluated.
pub fn random_solution<R: Rng + ?Sized>(evaluator: &mut Evaluator, rng: &mut R) -> Result<Solution> {
    let mut sol = random_point(evaluator.objective(), rng);
    evaluator.evaluate(&mut sol)?;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;

    fn evaluator(n: usize) -> Evaluator {
        Evaluator::new(Objective::rastrigin(n), EvaluationCounter::new())
    }

    #[test]
    fn rastrigin_examples() {
        for n in [1, 2, 10, 100] {
            assert_eq!(rastrigin(&vec![0.0; n]), 0.0);
        }
        assert!((rastrigin(&[1.0, 1.0]) - 2.0).abs() < 1e-12);
        assert!((rastrigin(&[0.5]) - 20.25).abs() < 1e-12);
    }

    #[test]
    fn objective_rejects_wrong_dimension() {
        let obj = Objective::rastrigin(3);
        assert!(matches!(obj.evaluate(&[0.0, 0.0]), Err(EmasError::DimensionMismatch { expected: 3, actual: 2 })));
        assert!(Objective::by_name("sphere", 3).is_err());
    }

    #[test]
    fn fitness_caches_and_counts() {
        let obj = Objective::rastrigin(2);
        let counter = EvaluationCounter::new();
        let mut sol = Solution::from_values(vec![0.0, 0.0]);
        assert_eq!(fitness(&obj, &mut sol, &counter).unwrap(), 0.0);
        assert_eq!(counter.get(), 1);
        assert_eq!(fitness(&obj, &mut sol, &counter).unwrap(), 0.0);
        assert_eq!(counter.get(), 1);

        let mut sol = Solution::from_values(vec![1.0, 1.0]);
        let f = fitness(&obj, &mut sol, &counter).unwrap();
        assert!((f + 2.0).abs() < 1e-12);
        assert!(sol.is_initialized());
        assert!((sol.objective().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn crossover_degenerate_and_contained() {
        let mut rng = seed_rng(3, 0);
        let v = vec![1.5, -2.0, 0.25];
        assert_eq!(crossover(&v, &v, &mut rng).unwrap(), v);
        let child = crossover(&[0.0, 0.0], &[1.0, 1.0], &mut rng).unwrap();
        assert!(child.iter().all(|c| (0.0..=1.0).contains(c)));
        assert!(crossover(&[0.0], &[0.0, 1.0], &mut rng).is_err());
    }

    #[test]
    fn mutate_rate_zero_is_identity() {
        let mut rng = seed_rng(3, 0);
        let v: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        assert_eq!(mutate(&v, 0.0, 0.05, &mut rng), v);
    }

    #[test]
    fn make_child_closed_gates_copies_first_parent() {
        let mut ev = evaluator(3);
        let mut rng = seed_rng(5, 0);
        let p1 = Solution::with_fitness(vec![1.0, 2.0, 3.0], -1.0);
        let p2 = Solution::with_fitness(vec![-1.0, -2.0, -3.0], -1.0);
        let params = EmasParams { recombination_probability: 0.0, mutation_probability: 0.0, ..Default::default() };
        let child = make_child(&p1, &p2, &params, &mut ev, &mut rng).unwrap();
        assert_eq!(child.values(), p1.values());
        assert!(child.is_initialized());
        assert_eq!(ev.evaluations(), 1);
    }

    #[test]
    fn make_child_identical_parents_with_crossover() {
        let mut ev = evaluator(3);
        let mut rng = seed_rng(5, 1);
        let p = Solution::with_fitness(vec![0.5, 0.5, 0.5], -1.0);
        let params = EmasParams { recombination_probability: 1.0, mutation_probability: 0.0, ..Default::default() };
        let child = make_child(&p, &p, &params, &mut ev, &mut rng).unwrap();
        assert_eq!(child.values(), p.values());
    }

    #[test]
    fn random_solution_is_initialised_and_counted() {
        let mut ev = evaluator(4);
        let mut rng = seed_rng(9, 0);
        for k in 1..=5 {
            let s = random_solution(&mut ev, &mut rng).unwrap();
            assert!(s.is_initialized());
            assert!(s.values().iter().all(|v| (-5.12..=5.12).contains(v)));
            assert_eq!(ev.evaluations(), k);
        }
    }

    #[test]
    fn evaluator_tracks_best_and_log() {
        let mut ev = evaluator(1).with_log();
        let mut a = Solution::from_values(vec![0.5]);
        let mut b = Solution::from_values(vec![0.0]);
        ev.evaluate(&mut a).unwrap();
        ev.evaluate(&mut b).unwrap();
        ev.evaluate(&mut b).unwrap();
        assert_eq!(ev.best(), 0.0);
        assert_eq!(ev.log().unwrap().len(), 2);
    }
}
