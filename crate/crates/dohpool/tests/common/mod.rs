//! A fleet of mock DoH servers behind a running dohpool service.
#![allow(dead_code)]

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use dohpool::config::CacheConfig;
use dohpool::mock::{MockBehavior, MockDohServer, MockPki};
use dohpool::{Method, Mode, ResolverEndpoint, Resolver, Server, ServiceConfig, TrustRoots};
use dohpool_core::{decode_message, encode_message, DnsMessage, Question, RecordType};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpStream, UdpSocket};
use tokio::sync::oneshot;

pub struct Fleet {
    pub pki: MockPki,
    pub mocks: Vec<MockDohServer>,
}

impl Fleet {
    pub async fn start(behaviors: Vec<MockBehavior>) -> Fleet {
        let pki = MockPki::new().unwrap();
        let mut mocks = Vec::new();
        for b in behaviors {
            mocks.push(MockDohServer::start(&pki, b).await.unwrap());
        }
        Fleet { pki, mocks }
    }

    /// `n` healthy mocks; mock `i` answers `10.i.0.1 .. 10.i.0.per`.
    pub async fn healthy(n: usize, per: usize) -> Fleet {
        Fleet::start((0..n).map(|i| distinct(i, per)).collect()).await
    }

    pub fn config(&self) -> ServiceConfig {
        let resolvers = self
            .mocks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                ResolverEndpoint::new(format!("mock-{i}"), &m.url(), Method::Post, Duration::from_secs(5))
                    .unwrap()
            })
            .collect::<Vec<_>>();
        ServiceConfig {
            listen: "127.0.0.1:0".parse().unwrap(),
            min_responders: resolvers.len(),
            resolvers,
            mode: Mode::Pool,
            x: 0.5,
            empty_is_failure: false,
            per_query_deadline: Duration::from_secs(2),
            domain_allowlist: vec!["pool.ntp.org".parse().unwrap()],
            trust: TrustRoots::Pinned(self.pki.ca_pem().into_bytes()),
            cache: CacheConfig {
                enabled: false,
                max_ttl: Duration::from_secs(300),
            },
        }
    }

    pub fn total_hits(&self) -> usize {
        self.mocks.iter().map(MockDohServer::hits).sum()
    }
}

pub fn distinct(i: usize, per: usize) -> MockBehavior {
    MockBehavior::sequential(Ipv4Addr::new(10, i as u8, 0, 1), per)
}

/// A running service that stops when dropped.
pub struct Running {
    pub addr: SocketAddr,
    pub resolver: Arc<Resolver>,
    _stop: oneshot::Sender<()>,
}

pub async fn run_service(config: ServiceConfig) -> Running {
    let resolver = Arc::new(Resolver::new(config).unwrap());
    let server = Server::bind(Arc::clone(&resolver), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let addr = server.local_addr();
    let (stop, stopped) = oneshot::channel::<()>();
    tokio::spawn(server.run(async {
        let _ = stopped.await;
    }));
    Running {
        addr,
        resolver,
        _stop: stop,
    }
}

pub fn query_wire(id: u16, name: &str, qtype: RecordType) -> Vec<u8> {
    let msg = DnsMessage::query(id, Question::new(name.parse().unwrap(), qtype));
    encode_message(&msg, 512).unwrap()
}

pub async fn udp_exchange(server: SocketAddr, wire: &[u8]) -> DnsMessage {
    let socket = UdpSocket::bind("127.0.0.1:0").await.unwrap();
    socket.send_to(wire, server).await.unwrap();
    let mut buf = vec![0u8; 65535];
    let len = tokio::time::timeout(Duration::from_secs(10), socket.recv(&mut buf))
        .await
        .expect("udp reply")
        .unwrap();
    decode_message(&buf[..len]).unwrap()
}

pub async fn tcp_exchange(server: SocketAddr, wire: &[u8]) -> DnsMessage {
    let mut stream = TcpStream::connect(server).await.unwrap();
    let mut framed = (wire.len() as u16).to_be_bytes().to_vec();
    framed.extend_from_slice(wire);
    stream.write_all(&framed).await.unwrap();
    let mut len = [0u8; 2];
    stream.read_exact(&mut len).await.unwrap();
    let mut buf = vec![0u8; u16::from_be_bytes(len).into()];
    stream.read_exact(&mut buf).await.unwrap();
    decode_message(&buf).unwrap()
}

pub fn addresses(msg: &DnsMessage) -> Vec<IpAddr> {
    msg.answers.iter().map(|r| r.address).collect()
}
