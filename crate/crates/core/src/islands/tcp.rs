//! Migration between processes over TCP.
//!
//! Every node listens for peers and dials the peers it was given. A
//! connection starts with a `HELLO` exchange naming both islands, and no
//! node steps before every peer has sent `READY`. A sender
//! writes `MIGRATE` and waits for the receiver's `ACK`; if that fails the
//! agent goes back to its source, so a broken connection never loses energy.

use std::collections::HashMap;
use std::io::BufReader;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::wire::{read_frame, write_frame, Frame};
use super::{MigrationEnvelope, Transport};
use crate::error::{EmasError, Result};
use crate::model::{Energy, IslandId};

const ACK_TIMEOUT: Duration = Duration::from_secs(2);

struct Peer {
    stream: TcpStream,
    reader: BufReader<TcpStream>,
}

struct Inner {
    island: IslandId,
    inbox: Mutex<Vec<MigrationEnvelope>>,
    accepting: AtomicBool,
    closed: AtomicBool,
    /// Peers that announced `READY`.
    ready: AtomicUsize,
    /// Accepted connections, kept so shutdown can unblock their readers.
    incoming: Mutex<Vec<TcpStream>>,
}

/// A node's TCP endpoint: a listener feeding the local inbox and one
/// outgoing connection per known peer island.
pub struct TcpTransport {
    inner: Arc<Inner>,
    local_addr: SocketAddr,
    peers: Mutex<HashMap<IslandId, Peer>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl TcpTransport {
    pub fn bind(island: IslandId, addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let inner = Arc::new(Inner {
            island,
            inbox: Mutex::new(Vec::new()),
            accepting: AtomicBool::new(true),
            closed: AtomicBool::new(false),
            ready: AtomicUsize::new(0),
            incoming: Mutex::new(Vec::new()),
        });
        let acceptor = {
            let inner = inner.clone();
            std::thread::Builder::new()
                .name(format!("tcp-accept-{island}"))
                .spawn(move || accept_loop(listener, inner))?
        };
        Ok(Self { inner, local_addr, peers: Mutex::new(HashMap::new()), threads: Mutex::new(vec![acceptor]) })
    }

    pub fn island(&self) -> IslandId {
        self.inner.island
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Dials a peer, retrying until `patience` runs out, and returns the
    /// island it announced.
    pub fn connect(&self, addr: &str, patience: Duration) -> Result<IslandId> {
        let t0 = Instant::now();
        let stream = loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                Err(e) if t0.elapsed() >= patience => return Err(e.into()),
                Err(_) => std::thread::sleep(Duration::from_millis(100)),
            }
        };
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(ACK_TIMEOUT))?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream.try_clone()?);
        write_frame(&mut writer, &Frame::Hello(self.inner.island))?;
        let peer = match read_frame(&mut reader)? {
            Some(Frame::Hello(id)) => id,
            other => return Err(EmasError::Wire(format!("expected HELLO, got {other:?}"))),
        };
        self.peers.lock().unwrap().insert(peer, Peer { stream, reader });
        log::info!("island {} connected to island {peer} at {addr}", self.inner.island);
        Ok(peer)
    }

    /// Start barrier: announces `READY` to every connected peer, then
    /// blocks until `count` peers have announced it in turn. Call it after
    /// dialling all peers, so a peer that is ready can reach this node.
    pub fn await_ready(&self, count: usize, patience: Duration) -> Result<()> {
        for peer in self.peers.lock().unwrap().values_mut() {
            write_frame(&mut peer.stream, &Frame::Ready)?;
        }
        let t0 = Instant::now();
        while self.inner.ready.load(Ordering::Acquire) < count {
            if t0.elapsed() >= patience {
                return Err(EmasError::Wire(format!(
                    "only {} of {count} peers ready within {patience:?}",
                    self.inner.ready.load(Ordering::Acquire)
                )));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        Ok(())
    }

    pub fn peers(&self) -> Vec<IslandId> {
        let mut ids: Vec<IslandId> = self.peers.lock().unwrap().keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Stops acknowledging migrants: senders keep their agents from now on.
    pub fn close_inbox(&self) {
        let _inbox = self.inner.inbox.lock().unwrap();
        self.inner.accepting.store(false, Ordering::Release);
    }

    /// Says `BYE` to every peer and closes all connections.
    pub fn shutdown(&self) {
        if self.inner.closed.swap(true, Ordering::AcqRel) {
            return;
        }
        self.close_inbox();
        for (_, mut peer) in self.peers.lock().unwrap().drain() {
            let _ = write_frame(&mut peer.stream, &Frame::Bye);
            let _ = peer.stream.shutdown(Shutdown::Both);
        }
        for s in self.inner.incoming.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        for t in self.threads.lock().unwrap().drain(..) {
            let _ = t.join();
        }
    }

    fn try_send(peer: &mut Peer, envelope: &MigrationEnvelope) -> Result<()> {
        write_frame(&mut peer.stream, &Frame::Migrate(envelope.agent.clone()))?;
        match read_frame(&mut peer.reader)? {
            Some(Frame::Ack(id)) if id == envelope.agent.id => Ok(()),
            other => Err(EmasError::Wire(format!("expected ACK {}, got {other:?}", envelope.agent.id))),
        }
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Transport for TcpTransport {
    fn send(&self, envelope: MigrationEnvelope) -> std::result::Result<(), MigrationEnvelope> {
        let mut peers = self.peers.lock().unwrap();
        let Some(peer) = peers.get_mut(&envelope.destination) else { return Err(envelope) };
        match Self::try_send(peer, &envelope) {
            Ok(()) => Ok(()),
            Err(e) => {
                log::warn!("migration to island {} failed ({e}); agent stays home", envelope.destination);
                if let Some(peer) = peers.remove(&envelope.destination) {
                    let _ = peer.stream.shutdown(Shutdown::Both);
                }
                Err(envelope)
            }
        }
    }

    fn receive(&self, island: IslandId) -> Vec<MigrationEnvelope> {
        if island != self.inner.island {
            return Vec::new();
        }
        let mut got = std::mem::take(&mut *self.inner.inbox.lock().unwrap());
        got.sort_by_key(|e| (e.source, e.agent.id));
        got
    }

    fn in_flight_energy(&self) -> Energy {
        self.inner.inbox.lock().unwrap().iter().map(|e| e.energy()).sum()
    }
}

fn accept_loop(listener: TcpListener, inner: Arc<Inner>) {
    let mut handlers = Vec::new();
    while !inner.closed.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, from)) => {
                let _ = stream.set_nonblocking(false);
                if let Ok(clone) = stream.try_clone() {
                    inner.incoming.lock().unwrap().push(clone);
                }
                let inner = inner.clone();
                handlers.push(std::thread::spawn(move || {
                    if let Err(e) = serve(stream, &inner) {
                        log::warn!("connection from {from} closed: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                log::error!("accept failed: {e}");
                break;
            }
        }
    }
    for h in handlers {
        let _ = h.join();
    }
}

/// Serves one incoming connection until `BYE`, end of stream or error.
fn serve(stream: TcpStream, inner: &Inner) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let source = match read_frame(&mut reader)? {
        Some(Frame::Hello(id)) => id,
        other => return Err(EmasError::Wire(format!("expected HELLO, got {other:?}"))),
    };
    write_frame(&mut writer, &Frame::Hello(inner.island))?;
    loop {
        match read_frame(&mut reader)? {
            None | Some(Frame::Bye) => return Ok(()),
            Some(Frame::Ready) => {
                inner.ready.fetch_add(1, Ordering::AcqRel);
            }
            Some(Frame::Migrate(agent)) => {
                // The inbox lock spans check, push and ACK, so once
                // close_inbox returns every queued agent has been acknowledged.
                let mut inbox = inner.inbox.lock().unwrap();
                if !inner.accepting.load(Ordering::Acquire) {
                    // No ACK: the sender keeps the agent.
                    let _ = writer.shutdown(Shutdown::Both);
                    return Ok(());
                }
                let id = agent.id;
                write_frame(&mut writer, &Frame::Ack(id))?;
                inbox.push(MigrationEnvelope { agent, source, destination: inner.island });
            }
            Some(other) => return Err(EmasError::Wire(format!("unexpected {other:?}"))),
        }
    }
}
