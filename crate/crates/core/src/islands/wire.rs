//! Text frames exchanged between island processes.
//!
//! A frame is a 4-byte big-endian payload length followed by a UTF-8
//! payload. Floating-point values travel as exactly 16 lowercase hex digits
//! of their IEEE-754 bits, so they survive the trip bit for bit.

use std::io::{self, Read, Write};

use crate::error::{EmasError, Result};
use crate::model::{Agent, AgentId, Energy, IslandId, Solution};

/// Largest payload accepted from a peer.
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Hello(IslandId),
    Migrate(Agent),
    /// Receipt for a `MIGRATE` frame.
    Ack(AgentId),
    /// The sender has reached all of its peers and is about to start.
    Ready,
    Bye,
}

pub fn hex_f64(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

pub fn parse_hex_f64(s: &str) -> Result<f64> {
    if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(EmasError::Wire(format!("`{s}` is not 16 lowercase hex digits")));
    }
    u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|e| EmasError::Wire(e.to_string()))
}

fn parse_int<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| EmasError::Wire(format!("missing or malformed {what}")))
}

pub fn encode(frame: &Frame) -> Result<String> {
    Ok(match frame {
        Frame::Hello(id) => format!("HELLO {}", id.0),
        Frame::Ack(id) => format!("ACK {}", id.0),
        Frame::Ready => "READY".to_string(),
        Frame::Bye => "BYE".to_string(),
        Frame::Migrate(agent) => {
            let fitness = agent
                .sol
                .fitness()
                .ok_or_else(|| EmasError::Wire(format!("agent {} has no cached fitness", agent.id)))?;
            let values = agent.sol.values();
            let mut out = format!("MIGRATE {} {} {}", agent.id.0, agent.energy.units(), values.len());
            for v in values.iter().chain(std::iter::once(&fitness)) {
                out.push(' ');
                out.push_str(&hex_f64(*v));
            }
            out
        }
    })
}

pub fn decode(payload: &str) -> Result<Frame> {
    let mut fields = payload.split(' ');
    let verb = fields.next().unwrap_or_default();
    let frame = match verb {
        "HELLO" => Frame::Hello(IslandId(parse_int(fields.next(), "island id")?)),
        "ACK" => Frame::Ack(AgentId(parse_int(fields.next(), "agent id")?)),
        "READY" => Frame::Ready,
        "BYE" => Frame::Bye,
        "MIGRATE" => {
            let id = AgentId(parse_int(fields.next(), "agent id")?);
            let energy = Energy(parse_int(fields.next(), "energy")?);
            let dim: usize = parse_int(fields.next(), "dimension")?;
            if dim > MAX_FRAME / 17 {
                return Err(EmasError::Wire(format!("dimension {dim} too large")));
            }
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(parse_hex_f64(fields.next().ok_or_else(|| EmasError::Wire("missing coordinate".into()))?)?);
            }
            let fitness = parse_hex_f64(fields.next().ok_or_else(|| EmasError::Wire("missing fitness".into()))?)?;
            Frame::Migrate(Agent::new(id, Solution::with_fitness(values, fitness), energy))
        }
        other => return Err(EmasError::Wire(format!("unknown verb `{other}`"))),
    };
    if fields.next().is_some() {
        return Err(EmasError::Wire(format!("trailing fields in {verb} frame")));
    }
    Ok(frame)
}

pub fn write_frame<W: Write>(out: &mut W, frame: &Frame) -> Result<()> {
    let payload = encode(frame)?;
    out.write_all(&(payload.len() as u32).to_be_bytes())?;
    out.write_all(payload.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Reads one frame; `None` on a clean end of stream before a frame starts.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match input.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(EmasError::Wire(format!("frame of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len];
    input.read_exact(&mut payload)?;
    let text = String::from_utf8(payload).map_err(|e| EmasError::Wire(e.to_string()))?;
    decode(&text).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_is_big_endian_bits() {
        assert_eq!(hex_f64(1.0), "3ff0000000000000");
        assert_eq!(hex_f64(-0.0), "8000000000000000");
        assert_eq!(parse_hex_f64("3ff0000000000000").unwrap(), 1.0);
        assert!(parse_hex_f64("3FF0000000000000").is_err());
        assert!(parse_hex_f64("3ff000000000000").is_err());
        assert!(parse_hex_f64("+ff0000000000000").is_err());
    }

    #[test]
    fn migrate_payload_layout() {
        let agent = Agent::new(AgentId(7), Solution::with_fitness(vec![1.0, -2.5], -3.0), Energy(12));
        let text = encode(&Frame::Migrate(agent.clone())).unwrap();
        assert_eq!(text, "MIGRATE 7 12 2 3ff0000000000000 c004000000000000 c008000000000000");
        assert_eq!(decode(&text).unwrap(), Frame::Migrate(agent));
    }

    #[test]
    fn special_values_round_trip_exactly() {
        let values = vec![f64::MIN_POSITIVE / 2.0, -0.0, f64::MAX, 5.12, -5.12, 1e-300];
        let agent = Agent::new(AgentId(1), Solution::with_fitness(values.clone(), -0.1), Energy(1));
        let Frame::Migrate(back) = decode(&encode(&Frame::Migrate(agent)).unwrap()).unwrap() else { panic!() };
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.sol.values()), bits(&values));
    }

    #[test]
    fn malformed_payloads() {
        assert!(decode("JUMP 1").is_err());
        assert!(decode("HELLO").is_err());
        assert!(decode("HELLO x").is_err());
        assert!(decode("BYE now").is_err());
        assert!(decode("MIGRATE 1 2 2 3ff0000000000000 3ff0000000000000").is_err());
        let uninit = Agent::new(AgentId(1), Solution::uninitialized(2), Energy(1));
        assert!(encode(&Frame::Migrate(uninit)).is_err());
    }

    #[test]
    fn framing() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Frame::Hello(IslandId(3))).unwrap();
        write_frame(&mut buf, &Frame::Ready).unwrap();
        write_frame(&mut buf, &Frame::Bye).unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 7]);
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap(), Some(Frame::Hello(IslandId(3))));
        assert_eq!(read_frame(&mut r).unwrap(), Some(Frame::Ready));
        assert_eq!(read_frame(&mut r).unwrap(), Some(Frame::Bye));
        assert_eq!(read_frame(&mut r).unwrap(), None);
        let huge = ((MAX_FRAME + 1) as u32).to_be_bytes();
        assert!(read_frame(&mut &huge[..]).is_err());
    }
}
