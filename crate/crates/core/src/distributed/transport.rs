use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::node::NodeService;
use super::wire::ProtocolError;

/// Carries one frame to a node and returns its reply frame.
pub trait Transport: Sync {
    fn call(&self, endpoint: &str, frame: &str) -> Result<String, ProtocolError>;
}

/// One request/response exchange as it crossed the transport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedFrame {
    pub endpoint: String,
    pub request: String,
    pub response: String,
}

/// In-process transport: endpoints are names bound to node services.
#[derive(Default)]
pub struct LoopbackTransport {
    nodes: HashMap<String, Arc<NodeService>>,
    log: Mutex<Vec<CapturedFrame>>,
}

impl LoopbackTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, endpoint: impl Into<String>, node: Arc<NodeService>) {
        self.nodes.insert(endpoint.into(), node);
    }

    pub fn captured(&self) -> Vec<CapturedFrame> {
        self.log.lock().expect("log lock").clone()
    }
}

impl Transport for LoopbackTransport {
    fn call(&self, endpoint: &str, frame: &str) -> Result<String, ProtocolError> {
        let node = self
            .nodes
            .get(endpoint)
            .ok_or_else(|| ProtocolError::Transport(format!("no node bound at `{endpoint}`")))?;
        let response = node.handle_frame(frame);
        self.log.lock().expect("log lock").push(CapturedFrame {
            endpoint: endpoint.to_string(),
            request: frame.to_string(),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Newline-delimited frames over TCP, one cached connection per endpoint.
#[derive(Default)]
pub struct TcpTransport {
    connections: Mutex<HashMap<String, BufReader<TcpStream>>>,
    log: Mutex<Vec<CapturedFrame>>,
}

impl TcpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn captured(&self) -> Vec<CapturedFrame> {
        self.log.lock().expect("log lock").clone()
    }

    fn exchange(stream: &mut BufReader<TcpStream>, frame: &str) -> std::io::Result<String> {
        let inner = stream.get_mut();
        inner.write_all(frame.as_bytes())?;
        inner.write_all(b"\n")?;
        inner.flush()?;
        let mut line = String::new();
        if stream.read_line(&mut line)? == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "connection closed",
            ));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    }
}

impl Transport for TcpTransport {
    fn call(&self, endpoint: &str, frame: &str) -> Result<String, ProtocolError> {
        let transport = |e: std::io::Error| ProtocolError::Transport(format!("{endpoint}: {e}"));
        let mut connections = self.connections.lock().expect("connection lock");
        if !connections.contains_key(endpoint) {
            let stream = TcpStream::connect(endpoint).map_err(transport)?;
            stream.set_nodelay(true).map_err(transport)?;
            connections.insert(endpoint.to_string(), BufReader::new(stream));
        }
        let stream = connections.get_mut(endpoint).expect("inserted above");
        let response = match TcpTransport::exchange(stream, frame) {
            Ok(r) => r,
            Err(e) => {
                connections.remove(endpoint);
                return Err(transport(e));
            }
        };
        drop(connections);
        self.log.lock().expect("log lock").push(CapturedFrame {
            endpoint: endpoint.to_string(),
            request: frame.to_string(),
            response: response.clone(),
        });
        Ok(response)
    }
}

fn serve_connection(stream: TcpStream, node: &NodeService) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        writer.write_all(node.handle_frame(&line).as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves `node` on `addr` until the process exits; one thread per connection.
pub fn serve_tcp(addr: impl ToSocketAddrs, node: Arc<NodeService>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    for stream in listener.incoming() {
        let stream = stream?;
        let node = Arc::clone(&node);
        std::thread::spawn(move || {
            let _ = serve_connection(stream, &node);
        });
    }
    Ok(())
}

/// A node served on a background thread, stopped on drop.
pub struct NodeServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl NodeServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn spawn(addr: impl ToSocketAddrs, node: Arc<NodeService>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let node = Arc::clone(&node);
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, &node);
                });
            }
        });
        Ok(NodeServer {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }
}

impl Drop for NodeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
