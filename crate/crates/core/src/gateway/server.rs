//! HTTP server exposing a [`Gateway`] over the wire protocol. Used for
//! loopback testing and for serving the mocks to other processes.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tiny_http::{Header, Method, Response, Server};

use super::wire::{self, codes, BoxesResponse, ErrorResponse, ImageResponse, MaskResponse, Request, TextResponse};
use super::{BackendError, BackendKind, Gateway};

/// Running server; stops and joins its workers on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    /// Block until the process is killed.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

struct Reply {
    status: u16,
    body: String,
}

fn ok(body: String) -> Reply {
    Reply { status: 200, body }
}

fn fail(status: u16, code: &str, error: impl Into<String>) -> Reply {
    Reply {
        status,
        body: wire::encode(&ErrorResponse {
            code: code.to_string(),
            error: error.into(),
        }),
    }
}

fn backend_failure(e: BackendError) -> Reply {
    match e {
        BackendError::RoiNotFound(roi) => fail(404, codes::ROI_NOT_FOUND, roi),
        BackendError::MockMiss { hash } => fail(404, codes::MOCK_MISS, hash),
        other => fail(502, codes::BACKEND, other.to_string()),
    }
}

fn kind_for(path: &str) -> Option<BackendKind> {
    let path = path.split('?').next().unwrap_or(path);
    BackendKind::ALL.into_iter().find(|k| k.endpoint() == path)
}

fn handle(gateway: &Gateway, kind: BackendKind, body: &str) -> Reply {
    let req: Request = match wire::decode(body) {
        Ok(r) => r,
        Err(e) => return fail(400, codes::BAD_REQUEST, e),
    };
    let image = match req.image.as_deref().map(wire::image_from_b64).transpose() {
        Ok(i) => i,
        Err(e) => return fail(400, codes::BAD_REQUEST, e.to_string()),
    };
    let mask = match req.mask.as_deref().map(wire::mask_from_b64).transpose() {
        Ok(m) => m,
        Err(e) => return fail(400, codes::BAD_REQUEST, e.to_string()),
    };
    if kind == BackendKind::Llm {
        return match gateway.llm_complete(&req.prompt, image.as_ref()) {
            Ok(text) => ok(wire::encode(&TextResponse { text })),
            Err(e) => backend_failure(e),
        };
    }
    let Some(image) = image else {
        return fail(400, codes::BAD_REQUEST, "missing image");
    };
    let image_reply = |r: Result<crate::image::ImageBuffer, BackendError>| match r {
        Ok(out) => match wire::image_to_b64(&out) {
            Ok(image) => ok(wire::encode(&ImageResponse { image })),
            Err(e) => fail(500, codes::BACKEND, e.to_string()),
        },
        Err(e) => backend_failure(e),
    };
    match kind {
        BackendKind::Inpaint => image_reply(gateway.inpaint(&image, mask.as_ref(), &req.prompt)),
        BackendKind::AttrEdit => image_reply(gateway.attr_edit(&image, &req.prompt)),
        BackendKind::Fusion => image_reply(gateway.fuse(&image, mask.as_ref(), &req.prompt)),
        BackendKind::GlobalTransform => image_reply(gateway.global_transform(&image, &req.prompt)),
        BackendKind::Segment if req.prompt.trim().is_empty() => match gateway.enumerate_layout(&image) {
            Ok(boxes) => ok(wire::encode(&BoxesResponse { boxes })),
            Err(e) => backend_failure(e),
        },
        BackendKind::Segment => match gateway.segment(&image, &req.prompt) {
            Ok(m) => match wire::mask_to_b64(&m) {
                Ok(mask) => ok(wire::encode(&MaskResponse { mask })),
                Err(e) => fail(500, codes::BACKEND, e.to_string()),
            },
            Err(e) => backend_failure(e),
        },
        BackendKind::Llm => unreachable!("handled above"),
    }
}

/// Bind `addr` (use port 0 for an ephemeral port) and serve on `workers` threads.
pub fn serve(gateway: Arc<Gateway>, addr: &str, workers: usize) -> std::io::Result<ServerHandle> {
    let server = Server::http(addr).map_err(std::io::Error::other)?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("server bound to a non-IP address"))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let json = Header::from_bytes("content-type", "application/json").expect("static header");
    let workers = (0..workers.max(1))
        .map(|_| {
            let (server, stop, gateway, json) = (server.clone(), stop.clone(), gateway.clone(), json.clone());
            thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let Ok(Some(mut rq)) = server.recv_timeout(Duration::from_millis(50)) else {
                        continue;
                    };
                    let mut body = String::new();
                    let reply = if *rq.method() != Method::Post {
                        fail(405, codes::BAD_REQUEST, "POST only")
                    } else if let Err(e) = rq.as_reader().read_to_string(&mut body) {
                        fail(400, codes::BAD_REQUEST, e.to_string())
                    } else {
                        match kind_for(rq.url()) {
                            Some(kind) => handle(&gateway, kind, &body),
                            None => fail(404, codes::NOT_FOUND, rq.url().to_string()),
                        }
                    };
                    let resp = Response::from_string(reply.body)
                        .with_status_code(reply.status)
                        .with_header(json.clone());
                    if let Err(e) = rq.respond(resp) {
                        log::warn!("failed to send response: {e}");
                    }
                }
            })
        })
        .collect();
    Ok(ServerHandle {
        addr: bound,
        stop,
        workers,
    })
}
