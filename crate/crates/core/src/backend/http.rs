//! HTTP/JSON transport: a blocking client implementing the backend traits,
//! and a small server exposing any [`Backends`] bundle on the same schema.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::wire::{self, *};
use super::{
    BackendError, Backends, Direction, FrameRef, Grounder, GroundingResult, SegmentQuery,
    SegmentationResult, Segmenter, Tracker,
};
use crate::frame_store::{Image, MaskFrame};

const MAX_BODY: u64 = 1 << 30;

/// Client for one backend base URL. Implements all three roles; which ones
/// the server actually serves is up to the deployment.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
    retries: u32,
    prefer_path: bool,
}

impl HttpBackend {
    pub fn new(
        base: impl Into<String>,
        timeout: Duration,
        retries: u32,
        prefer_path: bool,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            agent,
            retries,
            prefer_path,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// POST `body` to `path`. Transport failures are retried; an HTTP error
    /// status is returned at once as [`BackendError::Remote`].
    fn post(&self, path: &str, body: &str) -> Result<String, BackendError> {
        let url = format!("{}{}", self.base, path);
        let mut last = None;
        for _ in 0..=self.retries {
            let sent = self
                .agent
                .post(&url)
                .header("content-type", "application/json")
                .send(body);
            let mut resp = match sent {
                Ok(r) => r,
                Err(e) => {
                    last = Some(BackendError::Transport(format!("{url}: {e}")));
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = match resp
                .body_mut()
                .with_config()
                .limit(MAX_BODY)
                .read_to_string()
            {
                Ok(t) => t,
                Err(e) => {
                    last = Some(BackendError::Transport(format!("{url}: {e}")));
                    continue;
                }
            };
            if (200..300).contains(&status) {
                return Ok(text);
            }
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            return Err(BackendError::Remote { status, message });
        }
        Err(last.expect("at least one attempt"))
    }

    fn payload(&self, frame: &FrameRef<'_>) -> ImagePayload {
        ImagePayload::from_frame(frame, self.prefer_path)
    }
}

impl Grounder for HttpBackend {
    fn ground(
        &self,
        frames: &[FrameRef<'_>],
        query: &str,
        prompt: &str,
    ) -> Result<GroundingResult, BackendError> {
        let req = GroundRequest {
            query: query.to_string(),
            prompt: prompt.to_string(),
            frames: frames
                .iter()
                .map(|f| GroundFrame {
                    t: f.t,
                    image: self.payload(f),
                })
                .collect(),
        };
        let body = self.post(GROUND, &to_json(&req))?;
        wire::parse::<GroundResponse>("ground response", &body)
    }
}

impl Segmenter for HttpBackend {
    fn segment(&self, queries: &[SegmentQuery<'_>]) -> Result<SegmentationResult, BackendError> {
        let req = SegmentRequest {
            frames: queries
                .iter()
                .map(|q| SegmentFrame {
                    t: q.frame.t,
                    image: self.payload(&q.frame),
                    boxes: q.boxes.clone(),
                })
                .collect(),
        };
        let body = self.post(SEGMENT, &to_json(&req))?;
        wire::parse::<SegmentResponse>("segment response", &body)?.into_result()
    }
}

impl Tracker for HttpBackend {
    fn init(
        &self,
        frame: FrameRef<'_>,
        mask: &MaskFrame,
        direction: Direction,
    ) -> Result<String, BackendError> {
        let req = TrackInitRequest {
            t: frame.t,
            image: self.payload(&frame),
            mask_b64: mask_to_b64(mask)?,
            direction,
        };
        let body = self.post(TRACK_INIT, &to_json(&req))?;
        Ok(wire::parse::<TrackInitResponse>("track init response", &body)?.session)
    }

    fn step(&self, session: &str, frame: FrameRef<'_>) -> Result<MaskFrame, BackendError> {
        let req = TrackStepRequest {
            session: session.to_string(),
            t: frame.t,
            image: self.payload(&frame),
        };
        let body = self.post(TRACK_STEP, &to_json(&req))?;
        let resp = wire::parse::<TrackStepResponse>("track step response", &body)?;
        if resp.t != frame.t {
            return Err(BackendError::Schema(format!(
                "track step response for frame {} answers frame {}",
                frame.t, resp.t
            )));
        }
        mask_from_b64(&resp.mask_b64)
    }
}

/// Serves a [`Backends`] bundle over HTTP until dropped.
pub struct BackendServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for BackendServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendServer")
            .field("addr", &self.addr)
            .finish()
    }
}

/// Accepted sockets inherit `TCP_NODELAY` from the listener; without it
/// every small response waits out the peer's delayed ACK.
fn bind_nodelay(addr: &str) -> std::io::Result<std::net::TcpListener> {
    use std::net::ToSocketAddrs;
    let addr = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "no address"))?;
    let socket = socket2::Socket::new(
        socket2::Domain::for_address(addr),
        socket2::Type::STREAM,
        Some(socket2::Protocol::TCP),
    )?;
    socket.set_reuse_address(true)?;
    socket.set_tcp_nodelay(true)?;
    socket.bind(&addr.into())?;
    socket.listen(128)?;
    Ok(socket.into())
}

impl BackendServer {
    /// Bind `addr` (e.g. `127.0.0.1:0`) and start `workers` handler threads.
    pub fn start(backends: Backends, addr: &str, workers: usize) -> Result<Self, BackendError> {
        let listener =
            bind_nodelay(addr).map_err(|e| BackendError::Transport(format!("bind {addr}: {e}")))?;
        let server = tiny_http::Server::from_listener(listener, None)
            .map_err(|e| BackendError::Transport(format!("bind {addr}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| BackendError::Transport("server is not on an IP socket".into()))?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let stop = Arc::clone(&stop);
                let backends = backends.clone();
                std::thread::spawn(move || loop {
                    match server.recv() {
                        Ok(req) => handle(&backends, req),
                        Err(_) if stop.load(Ordering::SeqCst) => break,
                        Err(_) => continue,
                    }
                })
            })
            .collect();
        Ok(Self {
            addr,
            server,
            stop,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for BackendServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

fn status_for(err: &BackendError) -> u16 {
    match err {
        BackendError::UnknownSession(_) => 404,
        BackendError::OutOfOrder { .. } => 409,
        BackendError::Precondition(_)
        | BackendError::Schema(_)
        | BackendError::Encoding(_)
        | BackendError::NoObjects => 400,
        BackendError::Remote { status, .. } => *status,
        BackendError::Transport(_) => 502,
    }
}

fn handle(backends: &Backends, mut req: tiny_http::Request) {
    let mut body = String::new();
    let result = if *req.method() != tiny_http::Method::Post {
        Err(BackendError::Precondition(format!(
            "method {} not allowed",
            req.method()
        )))
    } else if let Err(e) = req.as_reader().read_to_string(&mut body) {
        Err(BackendError::Transport(format!("reading request: {e}")))
    } else {
        route(backends, req.url(), &body)
    };
    let (status, text) = match result {
        Ok(text) => (200, text),
        Err(e) => (
            status_for(&e),
            to_json(&ErrorBody {
                error: e.to_string(),
            }),
        ),
    };
    let header =
        tiny_http::Header::from_bytes("content-type", "application/json").expect("static header");
    let resp = tiny_http::Response::from_string(text)
        .with_status_code(status)
        .with_header(header);
    let _ = req.respond(resp);
}

fn route(backends: &Backends, path: &str, body: &str) -> Result<String, BackendError> {
    match path {
        GROUND => {
            let req: GroundRequest = wire::parse("ground request", body)?;
            let images = decode_all(req.frames.iter().map(|f| &f.image))?;
            let frames: Vec<FrameRef<'_>> = req
                .frames
                .iter()
                .zip(&images)
                .map(|(f, img)| frame_ref(f.t, img, &f.image))
                .collect();
            let out = backends.grounder.ground(&frames, &req.query, &req.prompt)?;
            Ok(to_json(&out))
        }
        SEGMENT => {
            let req: SegmentRequest = wire::parse("segment request", body)?;
            let images = decode_all(req.frames.iter().map(|f| &f.image))?;
            let queries: Vec<SegmentQuery<'_>> = req
                .frames
                .iter()
                .zip(&images)
                .map(|(f, img)| SegmentQuery {
                    frame: frame_ref(f.t, img, &f.image),
                    boxes: f.boxes.clone(),
                })
                .collect();
            let out = backends.segmenter.segment(&queries)?;
            Ok(to_json(&SegmentResponse::from_result(&out)?))
        }
        TRACK_INIT => {
            let req: TrackInitRequest = wire::parse("track init request", body)?;
            let img = req.image.decode()?;
            let mask = mask_from_b64(&req.mask_b64)?;
            let session =
                backends
                    .tracker
                    .init(frame_ref(req.t, &img, &req.image), &mask, req.direction)?;
            Ok(to_json(&TrackInitResponse { session }))
        }
        TRACK_STEP => {
            let req: TrackStepRequest = wire::parse("track step request", body)?;
            let img = req.image.decode()?;
            let mask = backends
                .tracker
                .step(&req.session, frame_ref(req.t, &img, &req.image))?;
            Ok(to_json(&TrackStepResponse {
                t: req.t,
                mask_b64: mask_to_b64(&mask)?,
            }))
        }
        other => Err(BackendError::Remote {
            status: 404,
            message: format!("no such endpoint {other}"),
        }),
    }
}

fn decode_all<'a>(
    payloads: impl Iterator<Item = &'a ImagePayload>,
) -> Result<Vec<Image>, BackendError> {
    payloads.map(ImagePayload::decode).collect()
}

fn frame_ref<'a>(t: usize, image: &'a Image, payload: &'a ImagePayload) -> FrameRef<'a> {
    FrameRef {
        t,
        image,
        path: payload.image_path.as_deref(),
    }
}
