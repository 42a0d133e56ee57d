//! Local RFC 8484 servers with scripted answers, for tests and live simulation.
//!
//! Each [`MockPki`] is a throwaway certificate authority. Servers present
//! leaf certificates for `localhost` / `127.0.0.1` signed by it, and clients
//! trust them by pinning [`MockPki::ca_pem`] as their only root.

use std::convert::Infallible;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use bytes::Bytes;
use dohpool_core::codec::MAX_MESSAGE_LEN;
use dohpool_core::{decode_message, encode_message, AddressRecord, DnsMessage, Rcode};
use http_body_util::{BodyExt, Full};
use hyper::body::Incoming;
use hyper::service::service_fn;
use hyper::{Request, Response, StatusCode};
use hyper_util::rt::{TokioExecutor, TokioIo};
use hyper_util::server::conn::auto;
use rcgen::{BasicConstraints, CertificateParams, CertifiedIssuer, DnType, IsCa, KeyPair};
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use tokio::net::TcpListener;
use tokio::task::{JoinHandle, JoinSet};
use tokio_rustls::TlsAcceptor;

use crate::doh::DNS_MESSAGE_MEDIA_TYPE;

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("certificate generation: {0}")]
    Cert(#[from] rcgen::Error),
    #[error("tls setup: {0}")]
    Tls(#[from] rustls::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct MockPki {
    ca: CertifiedIssuer<'static, KeyPair>,
}

impl MockPki {
    pub fn new() -> Result<Self, MockError> {
        let mut params = CertificateParams::new(Vec::<String>::new())?;
        params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        params
            .distinguished_name
            .push(DnType::CommonName, "dohpool mock root");
        let ca = CertifiedIssuer::self_signed(params, KeyPair::generate()?)?;
        Ok(MockPki { ca })
    }

    pub fn ca_pem(&self) -> String {
        self.ca.pem()
    }

    fn server_config(&self) -> Result<rustls::ServerConfig, MockError> {
        let key = KeyPair::generate()?;
        let params = CertificateParams::new(vec!["localhost".into(), "127.0.0.1".into()])?;
        let cert = params.signed_by(&key, &self.ca)?;
        let provider = Arc::new(rustls::crypto::aws_lc_rs::default_provider());
        let mut config = rustls::ServerConfig::builder_with_provider(provider)
            .with_safe_default_protocol_versions()?
            .with_no_client_auth()
            .with_single_cert(
                vec![cert.der().clone(), CertificateDer::from(self.ca.der().to_vec())],
                PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(key.serialize_der())),
            )?;
        config.alpn_protocols = vec![b"h2".to_vec(), b"http/1.1".to_vec()];
        Ok(config)
    }
}

/// What a mock resolver does with each query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockBehavior {
    /// Answer with these addresses (both families allowed, order kept).
    Answer { addresses: Vec<IpAddr>, ttl: u32 },
    /// Reply with a DNS error code and no answers.
    Rcode(Rcode),
    /// Reply with a bare HTTP status.
    HttpStatus(u16),
    /// Reply 200 with a body that is not a DNS message.
    Garbage,
    /// Accept the request and never answer.
    Hang,
    /// Wait, then behave as the inner behaviour.
    Delay(Duration, Box<MockBehavior>),
}

impl MockBehavior {
    pub fn answer(addresses: impl IntoIterator<Item = IpAddr>) -> Self {
        MockBehavior::Answer {
            addresses: addresses.into_iter().collect(),
            ttl: 300,
        }
    }

    /// `count` addresses `base, base+1, ...`.
    pub fn sequential(base: Ipv4Addr, count: usize) -> Self {
        let start = u32::from(base);
        Self::answer((0..count as u32).map(|i| IpAddr::V4(Ipv4Addr::from(start + i))))
    }
}

struct Shared {
    behavior: Mutex<MockBehavior>,
    hits: AtomicUsize,
}

/// A running mock resolver. Stops when dropped.
pub struct MockDohServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    task: JoinHandle<()>,
}

impl MockDohServer {
    pub async fn start(pki: &MockPki, behavior: MockBehavior) -> Result<Self, MockError> {
        let acceptor = TlsAcceptor::from(Arc::new(pki.server_config()?));
        let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, 0)).await?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            behavior: Mutex::new(behavior),
            hits: AtomicUsize::new(0),
        });
        let state = Arc::clone(&shared);
        let task = tokio::spawn(async move {
            let mut connections = JoinSet::new();
            loop {
                let Ok((tcp, _)) = listener.accept().await else {
                    continue;
                };
                let acceptor = acceptor.clone();
                let state = Arc::clone(&state);
                connections.spawn(async move {
                    let Ok(tls) = acceptor.accept(tcp).await else {
                        return;
                    };
                    let service = service_fn(move |req| handle(Arc::clone(&state), req));
                    let _ = auto::Builder::new(TokioExecutor::new())
                        .serve_connection(TokioIo::new(tls), service)
                        .await;
                });
                while connections.try_join_next().is_some() {}
            }
        });
        Ok(MockDohServer { addr, shared, task })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `https://localhost:<port>/dns-query`
    pub fn url(&self) -> String {
        format!("https://localhost:{}/dns-query", self.addr.port())
    }

    pub fn set_behavior(&self, behavior: MockBehavior) {
        *self.shared.behavior.lock().expect("behavior lock") = behavior;
    }

    /// Number of DNS queries received so far.
    pub fn hits(&self) -> usize {
        self.shared.hits.load(Ordering::SeqCst)
    }
}

impl Drop for MockDohServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

type Body = Full<Bytes>;

fn plain(status: StatusCode) -> Response<Body> {
    let mut resp = Response::new(Full::new(Bytes::new()));
    *resp.status_mut() = status;
    resp
}

async fn handle(state: Arc<Shared>, req: Request<Incoming>) -> Result<Response<Body>, Infallible> {
    if req.uri().path() != "/dns-query" {
        return Ok(plain(StatusCode::NOT_FOUND));
    }
    let wire = match *req.method() {
        hyper::Method::GET => {
            let param = req.uri().query().and_then(|q| {
                url::form_urlencoded::parse(q.as_bytes())
                    .find(|(k, _)| k == "dns")
                    .map(|(_, v)| v.into_owned())
            });
            match param.and_then(|p| URL_SAFE_NO_PAD.decode(p).ok()) {
                Some(w) => w,
                None => return Ok(plain(StatusCode::BAD_REQUEST)),
            }
        }
        hyper::Method::POST => {
            let content_type_ok = req
                .headers()
                .get(hyper::header::CONTENT_TYPE)
                .is_some_and(|v| v.as_bytes() == DNS_MESSAGE_MEDIA_TYPE.as_bytes());
            if !content_type_ok {
                return Ok(plain(StatusCode::UNSUPPORTED_MEDIA_TYPE));
            }
            match req.into_body().collect().await {
                Ok(body) => body.to_bytes().to_vec(),
                Err(_) => return Ok(plain(StatusCode::BAD_REQUEST)),
            }
        }
        _ => return Ok(plain(StatusCode::METHOD_NOT_ALLOWED)),
    };
    let Ok(query) = decode_message(&wire) else {
        return Ok(plain(StatusCode::BAD_REQUEST));
    };
    state.hits.fetch_add(1, Ordering::SeqCst);

    let mut behavior = state.behavior.lock().expect("behavior lock").clone();
    loop {
        match behavior {
            MockBehavior::Delay(wait, inner) => {
                tokio::time::sleep(wait).await;
                behavior = *inner;
            }
            MockBehavior::Hang => std::future::pending::<()>().await,
            MockBehavior::HttpStatus(code) => {
                return Ok(plain(
                    StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
                ))
            }
            MockBehavior::Garbage => return Ok(dns_body(b"\x00\x01not dns".to_vec())),
            MockBehavior::Rcode(rcode) => {
                let reply = DnsMessage::response_to(&query, rcode);
                return Ok(dns_body(encode_message(&reply, MAX_MESSAGE_LEN).unwrap_or_default()));
            }
            MockBehavior::Answer { addresses, ttl } => {
                let mut reply = DnsMessage::response_to(&query, Rcode::NoError);
                if let Some(q) = &query.question {
                    reply.answers = addresses
                        .iter()
                        .map(|a| AddressRecord::new(q.qname.clone(), ttl, *a))
                        .collect();
                }
                return Ok(dns_body(encode_message(&reply, MAX_MESSAGE_LEN).unwrap_or_default()));
            }
        }
    }
}

fn dns_body(wire: Vec<u8>) -> Response<Body> {
    let mut resp = Response::new(Full::new(Bytes::from(wire)));
    resp.headers_mut().insert(
        hyper::header::CONTENT_TYPE,
        hyper::header::HeaderValue::from_static(DNS_MESSAGE_MEDIA_TYPE),
    );
    resp
}
