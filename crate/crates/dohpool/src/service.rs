//! The classic-DNS front end: UDP and TCP listeners that answer A/AAAA
//! queries from pools built over the configured DoH resolvers.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use dohpool_core::codec::{CLASS_IN, MAX_MESSAGE_LEN, UDP_CLASSIC_LIMIT};
use dohpool_core::{
    combine_pool, decode_message, encode_message, majority_vote, pool_to_answers, AddressPool,
    AddressRecord, CombineError, CombineInput, DnsHeader, DnsMessage, Question, Rcode,
    ResolverResponse,
};
use futures::future::join_all;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::time::Instant;
use tracing::{debug, info, warn};

use crate::cache::AnswerCache;
use crate::config::{Mode, ServiceConfig};
use crate::doh::{DohClient, DohError};

/// Idle TCP connections are closed after this long.
const TCP_IDLE: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Udp,
    Tcp,
}

/// Result of resolving one question.
#[derive(Debug, Clone)]
pub struct Resolution {
    pub rcode: Rcode,
    pub answers: Vec<AddressRecord>,
    /// The combined pool, in pool mode when one was built.
    pub pool: Option<AddressPool>,
    /// Per-resolver outcomes. Empty for cache hits.
    pub responses: Vec<ResolverResponse>,
    pub cached: bool,
}

/// Fans questions out to every configured resolver and combines the answers.
pub struct Resolver {
    config: ServiceConfig,
    client: DohClient,
    cache: Option<AnswerCache>,
}

impl Resolver {
    pub fn new(config: ServiceConfig) -> Result<Self, DohError> {
        let client = DohClient::new(&config.trust)?;
        let cache = config
            .cache
            .enabled
            .then(|| AnswerCache::new(config.cache.max_ttl));
        Ok(Resolver {
            config,
            client,
            cache,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// Queries all resolvers at once. Whatever has not answered when the
    /// per-query deadline passes is reported as a timeout.
    pub async fn fan_out(&self, question: &Question) -> CombineInput {
        let deadline = self.config.per_query_deadline;
        let queries = self
            .config
            .resolvers
            .iter()
            .map(|ep| self.client.query(ep, question, deadline));
        let responses = join_all(queries).await;
        CombineInput::new(responses, self.config.policy())
            .expect("config validation guarantees unique labels")
    }

    pub async fn resolve(&self, question: &Question) -> Resolution {
        if let Some(answers) = self.cache.as_ref().and_then(|c| c.lookup(question)) {
            return Resolution {
                rcode: Rcode::NoError,
                answers,
                pool: None,
                responses: Vec::new(),
                cached: true,
            };
        }
        let input = self.fan_out(question).await;
        let mut resolution = Resolution {
            rcode: Rcode::NoError,
            answers: Vec::new(),
            pool: None,
            responses: Vec::new(),
            cached: false,
        };
        match self.config.mode {
            Mode::Pool => match combine_pool(&input) {
                Ok(pool) => {
                    resolution.answers = pool_to_answers(&pool, question);
                    resolution.pool = Some(pool);
                }
                Err(CombineError::EmptyPool { n_used }) => {
                    resolution.pool = Some(AddressPool {
                        contributors: input.usable().iter().map(|(l, _)| l.to_string()).collect(),
                        ..AddressPool::default()
                    });
                    debug!(n_used, "shortest answer list was empty");
                }
                Err(_) => resolution.rcode = Rcode::ServFail,
            },
            Mode::Majority => match majority_vote(&input) {
                Ok(mut winners) => {
                    for rec in &mut winners {
                        rec.name = question.qname.clone();
                    }
                    resolution.answers = winners;
                }
                Err(_) => resolution.rcode = Rcode::ServFail,
            },
        }
        if let (Some(cache), Rcode::NoError) = (&self.cache, resolution.rcode) {
            cache.store(question, &resolution.answers);
        }
        resolution.responses = input.responses().to_vec();
        resolution
    }

    /// Answers one wire-format query. Returns `None` when nothing should be
    /// sent back (the input was itself a response, or too short to carry an id).
    pub async fn handle_wire(&self, wire: &[u8], transport: Transport) -> Option<Vec<u8>> {
        let started = Instant::now();
        let query = match decode_message(wire) {
            Ok(q) => q,
            Err(err) => {
                if wire.len() < 2 || wire.get(2).is_some_and(|b| b & 0x80 != 0) {
                    return None;
                }
                debug!(%err, "malformed query");
                return Some(bare_reply(u16::from_be_bytes([wire[0], wire[1]]), Rcode::FormErr));
            }
        };
        if query.header.qr {
            return None;
        }
        let reply = |rcode| DnsMessage::response_to(&query, rcode);
        if query.header.opcode != 0 {
            return Some(finish(reply(Rcode::NotImp), transport));
        }
        let Some(question) = query.question.clone() else {
            return Some(finish(reply(Rcode::FormErr), transport));
        };
        if question.qclass != CLASS_IN
            || !question.qtype.is_address()
            || !self.config.allows(&question.qname)
        {
            info!(
                qname = %question.qname,
                qtype = %question.qtype,
                rcode = ?Rcode::Refused,
                "query refused"
            );
            return Some(finish(reply(Rcode::Refused), transport));
        }

        let resolution = self.resolve(&question).await;
        let mut response = reply(resolution.rcode);
        response.answers = resolution.answers.clone();
        let wire = finish(response, transport);
        log_query(&self.config, &question, &resolution, started.elapsed());
        Some(wire)
    }
}

fn log_query(config: &ServiceConfig, q: &Question, r: &Resolution, elapsed: Duration) {
    let resolvers = r
        .responses
        .iter()
        .map(|resp| format!("{}={} {}ms", resp.resolver, resp.summary(), resp.rtt.as_millis()))
        .collect::<Vec<_>>()
        .join("; ");
    info!(
        qname = %q.qname,
        qtype = %q.qtype,
        mode = %config.mode,
        rcode = ?r.rcode,
        k = r.pool.as_ref().map(|p| p.k),
        n_used = r.pool.as_ref().map(|p| p.n_used()),
        answers = r.answers.len(),
        cached = r.cached,
        elapsed_ms = elapsed.as_millis() as u64,
        resolvers = %resolvers,
        "query"
    );
}

fn bare_reply(id: u16, rcode: Rcode) -> Vec<u8> {
    let msg = DnsMessage {
        header: DnsHeader {
            id,
            qr: true,
            rcode,
            ..DnsHeader::default()
        },
        ..DnsMessage::default()
    };
    encode_message(&msg, MAX_MESSAGE_LEN).expect("header-only message fits")
}

/// Encodes a response for `transport`. A UDP response over 512 bytes goes
/// out with TC set and no answers so the client retries over TCP.
fn finish(mut msg: DnsMessage, transport: Transport) -> Vec<u8> {
    let limit = match transport {
        Transport::Udp => UDP_CLASSIC_LIMIT,
        Transport::Tcp => MAX_MESSAGE_LEN,
    };
    match encode_message(&msg, limit) {
        Ok(wire) => wire,
        Err(_) => {
            msg.answers.clear();
            match transport {
                Transport::Udp => msg.header.tc = true,
                Transport::Tcp => msg.header.rcode = Rcode::ServFail,
            }
            encode_message(&msg, limit).unwrap_or_else(|_| bare_reply(msg.header.id, Rcode::ServFail))
        }
    }
}

/// UDP and TCP listeners sharing one port.
pub struct Server {
    resolver: Arc<Resolver>,
    udp: Arc<UdpSocket>,
    tcp: TcpListener,
}

impl Server {
    /// Binds `addr` for both transports. Port 0 picks a free port.
    pub async fn bind(resolver: Arc<Resolver>, addr: SocketAddr) -> std::io::Result<Self> {
        let udp = UdpSocket::bind(addr).await?;
        let bound = udp.local_addr()?;
        let tcp = TcpListener::bind(bound).await?;
        Ok(Server {
            resolver,
            udp: Arc::new(udp),
            tcp,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.udp.local_addr().expect("bound socket has an address")
    }

    /// Serves until `shutdown` completes.
    pub async fn run(self, shutdown: impl Future<Output = ()>) {
        log_guarantee(self.resolver.config());
        info!(listen = %self.local_addr(), "serving");
        let udp = serve_udp(Arc::clone(&self.resolver), Arc::clone(&self.udp));
        let tcp = serve_tcp(Arc::clone(&self.resolver), self.tcp);
        tokio::select! {
            _ = udp => {}
            _ = tcp => {}
            _ = shutdown => info!("shutting down"),
        }
    }
}

fn log_guarantee(config: &ServiceConfig) {
    let g = config.guarantee();
    info!(
        n = g.n,
        x = config.x,
        min_responders = g.min_responders,
        max_compromised = g.max_compromised,
        worst_case_attacker_fraction = g.worst_case_fraction,
        mode = %config.mode,
        "if at least a fraction x of resolvers is honest, at most max_compromised can answer \
         for the attacker, holding at most worst_case_attacker_fraction of any pool"
    );
    if g.min_responders < g.n {
        warn!(
            min_responders = g.min_responders,
            n = g.n,
            "pools may be built from fewer than all resolvers; the honest fraction then \
             applies to the responders, not the configured set"
        );
    }
}

async fn serve_udp(resolver: Arc<Resolver>, socket: Arc<UdpSocket>) {
    let mut buf = vec![0u8; MAX_MESSAGE_LEN];
    loop {
        let (len, peer) = match socket.recv_from(&mut buf).await {
            Ok(v) => v,
            Err(err) => {
                debug!(%err, "udp receive failed");
                continue;
            }
        };
        let packet = buf[..len].to_vec();
        let resolver = Arc::clone(&resolver);
        let socket = Arc::clone(&socket);
        tokio::spawn(async move {
            if let Some(reply) = resolver.handle_wire(&packet, Transport::Udp).await {
                if let Err(err) = socket.send_to(&reply, peer).await {
                    debug!(%err, %peer, "udp send failed");
                }
            }
        });
    }
}

async fn serve_tcp(resolver: Arc<Resolver>, listener: TcpListener) {
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(v) => v,
            Err(err) => {
                debug!(%err, "tcp accept failed");
                continue;
            }
        };
        let resolver = Arc::clone(&resolver);
        tokio::spawn(async move {
            if let Err(err) = tcp_connection(&resolver, stream).await {
                debug!(%err, %peer, "tcp connection closed");
            }
        });
    }
}

async fn tcp_connection(resolver: &Resolver, mut stream: TcpStream) -> std::io::Result<()> {
    loop {
        let mut len = [0u8; 2];
        match tokio::time::timeout(TCP_IDLE, stream.read_exact(&mut len)).await {
            Ok(Ok(_)) => {}
            Ok(Err(err)) if err.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Ok(Err(err)) => return Err(err),
            Err(_) => return Ok(()),
        }
        let mut query = vec![0u8; u16::from_be_bytes(len).into()];
        stream.read_exact(&mut query).await?;
        if let Some(reply) = resolver.handle_wire(&query, Transport::Tcp).await {
            let mut framed = Vec::with_capacity(reply.len() + 2);
            framed.extend_from_slice(&(reply.len() as u16).to_be_bytes());
            framed.extend_from_slice(&reply);
            stream.write_all(&framed).await?;
        }
    }
}
