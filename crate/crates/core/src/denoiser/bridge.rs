//! Client for an external denoiser served over a framed TCP protocol.
//!
//! Every message is one frame:
//!
//! ```text
//! u32 LE   length of everything that follows
//! bytes    UTF-8 JSON header, terminated by a single '\n'
//! bytes    payload: f32 LE values, row-major [h][w][c]
//! ```
//!
//! The client opens with a `{"type":"hello","version":1}` frame (empty
//! payload); the server answers with its capabilities. A denoising request
//! carries `{"shape":[h,w,c],"sigma":s,"id":n}` and the image; the reply
//! echoes `id` and `shape` with the denoised image. Failures come back as
//! `{"error":"...","id":n}` with an empty payload, and the connection stays
//! usable.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};

use super::Denoiser;
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

/// `k` assumed for pretrained pseudo-contractive weights when the
/// configuration does not say otherwise.
pub const DEFAULT_DECLARED_K: f64 = 0.9;

/// Frames larger than this are refused rather than allocated.
pub const MAX_FRAME_BYTES: usize = 1 << 30;

/// A decoded frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub header: Value,
    pub payload: Vec<f32>,
}

pub fn write_frame(w: &mut impl Write, header: &Value, payload: &[f32]) -> Result<()> {
    let mut head = serde_json::to_vec(header)?;
    head.push(b'\n');
    let len = head.len() + 4 * payload.len();
    if len > MAX_FRAME_BYTES {
        return Err(Error::Bridge(format!("frame of {len} bytes exceeds the limit")));
    }
    w.write_all(&(len as u32).to_le_bytes())?;
    w.write_all(&head)?;
    let mut body = Vec::with_capacity(4 * payload.len());
    for v in payload {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Frame> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(Error::Bridge(format!("frame of {len} bytes exceeds the limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    decode_frame(&buf)
}

/// Decodes the bytes following the length prefix.
pub fn decode_frame(buf: &[u8]) -> Result<Frame> {
    let newline = buf
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Bridge("frame header is not newline-terminated".into()))?;
    let header: Value = serde_json::from_slice(&buf[..newline])
        .map_err(|e| Error::Bridge(format!("frame header is not valid JSON: {e}")))?;
    let body = &buf[newline + 1..];
    if !body.len().is_multiple_of(4) {
        return Err(Error::Bridge(format!("payload of {} bytes is not a whole number of f32", body.len())));
    }
    let payload = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Frame { header, payload })
}

/// What the server reports during the handshake.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub model_name: String,
    pub declared_k: f64,
    /// Channel counts the model accepts (a bare number is accepted too).
    #[serde(deserialize_with = "one_or_many")]
    pub channels: Vec<usize>,
    pub version: u32,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(c) => vec![c],
        OneOrMany::Many(v) => v,
    })
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Connection {
    fn exchange(&mut self, header: &Value, payload: &[f32]) -> Result<Frame> {
        write_frame(&mut self.writer, header, payload)?;
        read_frame(&mut self.reader)
    }
}

/// A connected, handshaken bridge client. One request is in flight at a time.
pub struct BridgeClient {
    conn: Mutex<Connection>,
    caps: Capabilities,
    next_id: AtomicU64,
    endpoint: String,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient").field("endpoint", &self.endpoint).field("caps", &self.caps).finish()
    }
}

impl BridgeClient {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self> {
        let addr = endpoint
            .to_socket_addrs()
            .map_err(|e| Error::Bridge(format!("cannot resolve {endpoint}: {e}")))?
            .next()
            .ok_or_else(|| Error::Bridge(format!("{endpoint} resolves to no address")))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)
            .map_err(|e| Error::Bridge(format!("cannot reach {endpoint}: {e}")))?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let mut conn = Connection { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) };

        let reply = conn.exchange(&json!({"type": "hello", "version": PROTOCOL_VERSION}), &[])?;
        if let Some(msg) = reply.header.get("error") {
            return Err(Error::Bridge(format!("handshake refused: {msg}")));
        }
        let caps: Capabilities = serde_json::from_value(reply.header)
            .map_err(|e| Error::Bridge(format!("malformed handshake reply: {e}")))?;
        if caps.version != PROTOCOL_VERSION {
            return Err(Error::Bridge(format!(
                "protocol version mismatch: server {} client {PROTOCOL_VERSION}",
                caps.version
            )));
        }
        if !(0.0..=1.0).contains(&caps.declared_k) {
            return Err(Error::Bridge(format!("server declares k = {} outside [0, 1]", caps.declared_k)));
        }
        Ok(BridgeClient { conn: Mutex::new(conn), caps, next_id: AtomicU64::new(1), endpoint: endpoint.into() })
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.caps
    }
}

impl Denoiser for BridgeClient {
    fn name(&self) -> String {
        format!("bridge({}@{})", self.caps.model_name, self.endpoint)
    }

    fn declared_k(&self) -> f64 {
        self.caps.declared_k
    }

    fn denoise_image(&self, image: &[f64], dims: [usize; 3], sigma: f64) -> Result<Vec<f64>> {
        let [h, w, c] = dims;
        if !self.caps.channels.contains(&c) {
            return Err(Error::Config(format!(
                "model '{}' accepts channels {:?}, slices have {c}",
                self.caps.model_name, self.caps.channels
            )));
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let header = json!({"shape": [h, w, c], "sigma": sigma, "id": id});
        let payload: Vec<f32> = image.iter().map(|&v| v as f32).collect();
        let reply = {
            let mut conn = self.conn.lock().map_err(|_| Error::Bridge("connection lock poisoned".into()))?;
            conn.exchange(&header, &payload)?
        };
        if let Some(msg) = reply.header.get("error") {
            return Err(Error::Bridge(format!("server error for request {id}: {msg}")));
        }
        if reply.header.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(Error::Bridge(format!("reply id {:?} does not match request {id}", reply.header.get("id"))));
        }
        if reply.header.get("shape") != Some(&json!([h, w, c])) {
            return Err(Error::Bridge(format!("reply shape {:?} differs from [{h}, {w}, {c}]", reply.header.get("shape"))));
        }
        if reply.payload.len() != image.len() {
            return Err(Error::Bridge(format!(
                "reply carries {} values, expected {}",
                reply.payload.len(),
                image.len()
            )));
        }
        Ok(reply.payload.into_iter().map(f64::from).collect())
    }
}

#[cfg(test)]
pub(crate) mod mock {
    //! A minimal in-process server speaking the protocol, for tests.

    use super::*;
    use std::net::TcpListener;
    use std::thread::JoinHandle;

    #[derive(Clone, Debug)]
    pub struct MockOptions {
        pub version: u32,
        pub declared_k: f64,
        pub channels: Vec<usize>,
        /// Reply to every request with an error frame.
        pub fail_requests: bool,
        /// Echo a different id than the request's.
        pub wrong_id: bool,
    }

    impl Default for MockOptions {
        fn default() -> Self {
            MockOptions { version: PROTOCOL_VERSION, declared_k: 0.0, channels: vec![1, 3], fail_requests: false, wrong_id: false }
        }
    }

    /// Serves one connection: identity "model" that echoes the payload.
    /// Requests whose header is malformed or has `c` outside the declared
    /// channels get an error frame and the loop continues.
    pub fn spawn(opts: MockOptions) -> (String, JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut writer = BufWriter::new(stream);
            let mut served = 0;
            while let Ok(frame) = read_frame(&mut reader) {
                let id = frame.header.get("id").cloned().unwrap_or(Value::Null);
                if frame.header.get("type").and_then(Value::as_str) == Some("hello") {
                    let caps = json!({
                        "model_name": "identity",
                        "declared_k": opts.declared_k,
                        "channels": opts.channels,
                        "version": opts.version,
                    });
                    write_frame(&mut writer, &caps, &[]).unwrap();
                    continue;
                }
                let shape: Option<Vec<usize>> = frame.header.get("shape").and_then(|s| serde_json::from_value(s.clone()).ok());
                let reply_err = |msg: &str| json!({"error": msg, "id": id});
                let reply = match shape {
                    _ if opts.fail_requests => Err(reply_err("model failure")),
                    Some(s) if s.len() == 3 && opts.channels.contains(&s[2]) => {
                        if s.iter().product::<usize>() == frame.payload.len() {
                            let id = if opts.wrong_id { json!(999_999) } else { id.clone() };
                            Ok(json!({"shape": s, "id": id}))
                        } else {
                            Err(reply_err("payload length does not match shape"))
                        }
                    }
                    _ => Err(reply_err("bad shape")),
                };
                match reply {
                    Ok(h) => write_frame(&mut writer, &h, &frame.payload).unwrap(),
                    Err(h) => write_frame(&mut writer, &h, &[]).unwrap(),
                }
                served += 1;
            }
            served
        });
        (addr, handle)
    }
}
