//! Minimal HTTP/1.1 server for download tests. One thread per connection,
//! `Connection: close`, GET only.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

#[derive(Debug, Clone)]
struct Route {
    body: Vec<u8>,
    content_type: String,
    /// Requests answered with `fail_status` before the body is served.
    fail_first: usize,
    fail_status: u16,
}

#[derive(Default)]
struct State {
    routes: Mutex<HashMap<String, Route>>,
    hits: Mutex<HashMap<String, usize>>,
    inflight: AtomicUsize,
    peak: AtomicUsize,
    delay_ms: AtomicUsize,
    stop: AtomicBool,
}

pub struct MockServer {
    addr: SocketAddr,
    state: Arc<State>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().expect("addr");
        let state = Arc::new(State::default());
        let st = state.clone();
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if st.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let st = st.clone();
                std::thread::spawn(move || serve(conn, &st));
            }
        });
        Self {
            addr,
            state,
            handle: Some(handle),
        }
    }

    pub fn base(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base())
    }

    pub fn add(&self, path: &str, body: Vec<u8>, content_type: &str) {
        self.add_flaky(path, body, content_type, 0, 503);
    }

    pub fn add_flaky(&self, path: &str, body: Vec<u8>, content_type: &str, fail_first: usize, fail_status: u16) {
        self.state.routes.lock().unwrap().insert(
            path.to_string(),
            Route {
                body,
                content_type: content_type.to_string(),
                fail_first,
                fail_status,
            },
        );
    }

    pub fn hits(&self, path: &str) -> usize {
        self.state.hits.lock().unwrap().get(path).copied().unwrap_or(0)
    }

    pub fn total_hits(&self) -> usize {
        self.state.hits.lock().unwrap().values().sum()
    }

    pub fn peak_inflight(&self) -> usize {
        self.state.peak.load(Ordering::SeqCst)
    }

    pub fn set_delay(&self, d: Duration) {
        self.state.delay_ms.store(d.as_millis() as usize, Ordering::SeqCst);
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.state.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(conn: TcpStream, st: &State) {
    let n = st.inflight.fetch_add(1, Ordering::SeqCst) + 1;
    st.peak.fetch_max(n, Ordering::SeqCst);
    let _ = handle(conn, st);
    st.inflight.fetch_sub(1, Ordering::SeqCst);
}

fn handle(mut conn: TcpStream, st: &State) -> std::io::Result<()> {
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut request = String::new();
    reader.read_line(&mut request)?;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
    }
    let path = request.split_whitespace().nth(1).unwrap_or("/").to_string();
    let seen = {
        let mut hits = st.hits.lock().unwrap();
        let h = hits.entry(path.clone()).or_insert(0);
        *h += 1;
        *h
    };
    let delay = st.delay_ms.load(Ordering::SeqCst);
    if delay > 0 {
        std::thread::sleep(Duration::from_millis(delay as u64));
    }
    let route = st.routes.lock().unwrap().get(&path).cloned();
    let (status, body, ct) = match route {
        None => (404, b"not found".to_vec(), "text/plain".to_string()),
        Some(r) if seen <= r.fail_first => (r.fail_status, b"try later".to_vec(), "text/plain".to_string()),
        Some(r) => (200, r.body, r.content_type),
    };
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        429 => "Too Many Requests",
        _ => "Error",
    };
    write!(
        conn,
        "HTTP/1.1 {status} {reason}\r\nContent-Length: {}\r\nContent-Type: {ct}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    conn.write_all(&body)?;
    conn.flush()
}
