//! DNS wire format: the subset needed to sit in front of stub clients and to
//! produce/consume `application/dns-message` bodies.
//!
//! Decoding follows compression pointers. Encoding never compresses.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use thiserror::Error;

pub const HEADER_LEN: usize = 12;
/// Classic UDP payload limit for queries that carry no EDNS option.
pub const UDP_CLASSIC_LIMIT: usize = 512;
/// Largest message that fits a TCP or HTTP length.
pub const MAX_MESSAGE_LEN: usize = u16::MAX as usize;
pub const MAX_TTL: u32 = i32::MAX as u32;
pub const CLASS_IN: u16 = 1;

const MAX_LABEL_LEN: usize = 63;
const MAX_NAME_WIRE_LEN: usize = 255;
const MAX_POINTER_HOPS: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("message truncated at offset {0}")]
    Truncated(usize),
    #[error("label at offset {0} overruns the name length limit")]
    LabelOverrun(usize),
    #[error("compression pointer loop at offset {0}")]
    PointerLoop(usize),
    #[error("reserved label type at offset {0}")]
    BadLabelType(usize),
    #[error("section counts do not match message contents: {0}")]
    CountMismatch(&'static str),
    #[error("rdata length {len} invalid for record type {rtype}")]
    BadRdata { rtype: RecordType, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("encoded message is {size} bytes, limit is {limit}")]
    MessageTooLarge { size: usize, limit: usize },
    #[error("section {0:?} holds more than 65535 records")]
    TooManyRecords(Section),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("empty label in {0:?}")]
    EmptyLabel(String),
    #[error("label longer than 63 bytes")]
    LabelTooLong,
    #[error("name longer than 255 bytes on the wire")]
    NameTooLong,
    #[error("bad escape sequence in {0:?}")]
    BadEscape(String),
}

/// Record type code. Only `A` and `AAAA` take part in pool generation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordType(pub u16);

impl RecordType {
    pub const A: RecordType = RecordType(1);
    pub const NS: RecordType = RecordType(2);
    pub const CNAME: RecordType = RecordType(5);
    pub const SOA: RecordType = RecordType(6);
    pub const PTR: RecordType = RecordType(12);
    pub const MX: RecordType = RecordType(15);
    pub const TXT: RecordType = RecordType(16);
    pub const AAAA: RecordType = RecordType(28);
    pub const DNAME: RecordType = RecordType(39);
    pub const OPT: RecordType = RecordType(41);

    pub fn is_address(self) -> bool {
        self == Self::A || self == Self::AAAA
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match *self {
            Self::A => "A",
            Self::NS => "NS",
            Self::CNAME => "CNAME",
            Self::SOA => "SOA",
            Self::PTR => "PTR",
            Self::MX => "MX",
            Self::TXT => "TXT",
            Self::AAAA => "AAAA",
            Self::DNAME => "DNAME",
            Self::OPT => "OPT",
            RecordType(other) => return write!(f, "TYPE{other}"),
        };
        f.write_str(name)
    }
}

impl fmt::Debug for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for RecordType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.to_ascii_uppercase();
        Ok(match upper.as_str() {
            "A" => Self::A,
            "NS" => Self::NS,
            "CNAME" => Self::CNAME,
            "SOA" => Self::SOA,
            "PTR" => Self::PTR,
            "MX" => Self::MX,
            "TXT" => Self::TXT,
            "AAAA" => Self::AAAA,
            "DNAME" => Self::DNAME,
            other => match other.strip_prefix("TYPE").map(str::parse::<u16>) {
                Some(Ok(code)) => RecordType(code),
                _ => return Err(format!("unknown record type {s:?}")),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rcode {
    #[default]
    NoError,
    FormErr,
    ServFail,
    NxDomain,
    NotImp,
    Refused,
    Other(u8),
}

impl Rcode {
    pub fn from_bits(bits: u8) -> Self {
        match bits & 0x0f {
            0 => Rcode::NoError,
            1 => Rcode::FormErr,
            2 => Rcode::ServFail,
            3 => Rcode::NxDomain,
            4 => Rcode::NotImp,
            5 => Rcode::Refused,
            other => Rcode::Other(other),
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            Rcode::NoError => 0,
            Rcode::FormErr => 1,
            Rcode::ServFail => 2,
            Rcode::NxDomain => 3,
            Rcode::NotImp => 4,
            Rcode::Refused => 5,
            Rcode::Other(b) => b & 0x0f,
        }
    }
}

impl fmt::Display for Rcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rcode::NoError => f.write_str("NOERROR"),
            Rcode::FormErr => f.write_str("FORMERR"),
            Rcode::ServFail => f.write_str("SERVFAIL"),
            Rcode::NxDomain => f.write_str("NXDOMAIN"),
            Rcode::NotImp => f.write_str("NOTIMP"),
            Rcode::Refused => f.write_str("REFUSED"),
            Rcode::Other(b) => write!(f, "RCODE{b}"),
        }
    }
}

/// A domain name as a list of raw labels. Equality and hashing ignore ASCII case.
#[derive(Clone, Default)]
pub struct Name {
    labels: Vec<Vec<u8>>,
}

impl Name {
    pub fn root() -> Self {
        Name { labels: Vec::new() }
    }

    pub fn from_labels<I, L>(labels: I) -> Result<Self, NameError>
    where
        I: IntoIterator<Item = L>,
        L: Into<Vec<u8>>,
    {
        let labels: Vec<Vec<u8>> = labels.into_iter().map(Into::into).collect();
        let mut wire_len = 1;
        for label in &labels {
            if label.is_empty() {
                return Err(NameError::EmptyLabel(String::new()));
            }
            if label.len() > MAX_LABEL_LEN {
                return Err(NameError::LabelTooLong);
            }
            wire_len += 1 + label.len();
        }
        if wire_len > MAX_NAME_WIRE_LEN {
            return Err(NameError::NameTooLong);
        }
        Ok(Name { labels })
    }

    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }

    pub fn is_root(&self) -> bool {
        self.labels.is_empty()
    }

    /// Uncompressed length on the wire, including the root byte.
    pub fn wire_len(&self) -> usize {
        1 + self.labels.iter().map(|l| 1 + l.len()).sum::<usize>()
    }

    pub fn to_lowercase(&self) -> Name {
        Name {
            labels: self.labels.iter().map(|l| l.to_ascii_lowercase()).collect(),
        }
    }

    /// True when `self` equals `suffix` or lies below it.
    pub fn is_subdomain_of(&self, suffix: &Name) -> bool {
        if suffix.labels.len() > self.labels.len() {
            return false;
        }
        let offset = self.labels.len() - suffix.labels.len();
        self.labels[offset..]
            .iter()
            .zip(&suffix.labels)
            .all(|(a, b)| a.eq_ignore_ascii_case(b))
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        for label in &self.labels {
            out.push(label.len() as u8);
            out.extend_from_slice(label);
        }
        out.push(0);
    }
}

impl PartialEq for Name {
    fn eq(&self, other: &Self) -> bool {
        self.labels.len() == other.labels.len()
            && self
                .labels
                .iter()
                .zip(&other.labels)
                .all(|(a, b)| a.eq_ignore_ascii_case(b))
    }
}

impl Eq for Name {}

impl std::hash::Hash for Name {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        state.write_usize(self.labels.len());
        for label in &self.labels {
            state.write_usize(label.len());
            for b in label {
                state.write_u8(b.to_ascii_lowercase());
            }
        }
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.labels.is_empty() {
            return f.write_str(".");
        }
        for (i, label) in self.labels.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            for &b in label {
                match b {
                    b'.' | b'\\' => write!(f, "\\{}", b as char)?,
                    0x21..=0x7e => write!(f, "{}", b as char)?,
                    _ => write!(f, "\\{b:03}")?,
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Name({self})")
    }
}

impl FromStr for Name {
    type Err = NameError;

    /// Presentation format: dot-separated labels, optional trailing dot,
    /// `\.`, `\\` and `\DDD` escapes.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "." || s.is_empty() {
            return Ok(Name::root());
        }
        let bytes = s.as_bytes();
        let mut labels = Vec::new();
        let mut current = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => {
                    let rest = &bytes[i + 1..];
                    if rest.len() >= 3 && rest[..3].iter().all(u8::is_ascii_digit) {
                        let value: u32 = std::str::from_utf8(&rest[..3])
                            .ok()
                            .and_then(|d| d.parse().ok())
                            .unwrap_or(256);
                        if value > 255 {
                            return Err(NameError::BadEscape(s.to_string()));
                        }
                        current.push(value as u8);
                        i += 4;
                    } else if let Some(&c) = rest.first() {
                        current.push(c);
                        i += 2;
                    } else {
                        return Err(NameError::BadEscape(s.to_string()));
                    }
                }
                b'.' => {
                    if current.is_empty() {
                        return Err(NameError::EmptyLabel(s.to_string()));
                    }
                    labels.push(std::mem::take(&mut current));
                    i += 1;
                }
                c => {
                    current.push(c);
                    i += 1;
                }
            }
        }
        if !current.is_empty() {
            labels.push(current);
        }
        Name::from_labels(labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DnsHeader {
    pub id: u16,
    /// Set on responses.
    pub qr: bool,
    pub opcode: u8,
    pub aa: bool,
    pub tc: bool,
    pub rd: bool,
    pub ra: bool,
    /// The three bits between RA and RCODE (Z, AD, CD), kept verbatim.
    pub z: u8,
    pub rcode: Rcode,
}


impl DnsHeader {
    fn flags(&self) -> u16 {
        (u16::from(self.qr) << 15)
            | (u16::from(self.opcode & 0x0f) << 11)
            | (u16::from(self.aa) << 10)
            | (u16::from(self.tc) << 9)
            | (u16::from(self.rd) << 8)
            | (u16::from(self.ra) << 7)
            | (u16::from(self.z & 0x07) << 4)
            | u16::from(self.rcode.bits())
    }

    fn from_flags(id: u16, flags: u16) -> Self {
        DnsHeader {
            id,
            qr: flags & 0x8000 != 0,
            opcode: ((flags >> 11) & 0x0f) as u8,
            aa: flags & 0x0400 != 0,
            tc: flags & 0x0200 != 0,
            rd: flags & 0x0100 != 0,
            ra: flags & 0x0080 != 0,
            z: ((flags >> 4) & 0x07) as u8,
            rcode: Rcode::from_bits((flags & 0x0f) as u8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Question {
    pub qname: Name,
    pub qtype: RecordType,
    pub qclass: u16,
}

impl Question {
    pub fn new(qname: Name, qtype: RecordType) -> Self {
        Question {
            qname,
            qtype,
            qclass: CLASS_IN,
        }
    }
}

/// An A or AAAA record. The record type follows from the address family.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AddressRecord {
    pub name: Name,
    pub ttl: u32,
    pub address: IpAddr,
}

impl AddressRecord {
    pub fn new(name: Name, ttl: u32, address: IpAddr) -> Self {
        AddressRecord { name, ttl, address }
    }

    pub fn rtype(&self) -> RecordType {
        match self.address {
            IpAddr::V4(_) => RecordType::A,
            IpAddr::V6(_) => RecordType::AAAA,
        }
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        self.name.write_to(out);
        out.extend_from_slice(&self.rtype().0.to_be_bytes());
        out.extend_from_slice(&CLASS_IN.to_be_bytes());
        out.extend_from_slice(&self.ttl.min(MAX_TTL).to_be_bytes());
        match self.address {
            IpAddr::V4(v4) => {
                out.extend_from_slice(&4u16.to_be_bytes());
                out.extend_from_slice(&v4.octets());
            }
            IpAddr::V6(v6) => {
                out.extend_from_slice(&16u16.to_be_bytes());
                out.extend_from_slice(&v6.octets());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Answer,
    Authority,
    Additional,
}

/// Any record that is not an IN-class A/AAAA answer. Names inside the rdata
/// of well-known types are stored decompressed so the record re-encodes
/// without pointers into the original message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub section: Section,
    /// Index of the record within its section in the original message.
    pub position: usize,
    pub name: Name,
    pub rtype: RecordType,
    pub class: u16,
    pub ttl: u32,
    pub rdata: Vec<u8>,
}

impl RawRecord {
    fn write_to(&self, out: &mut Vec<u8>) {
        self.name.write_to(out);
        out.extend_from_slice(&self.rtype.0.to_be_bytes());
        out.extend_from_slice(&self.class.to_be_bytes());
        out.extend_from_slice(&self.ttl.to_be_bytes());
        out.extend_from_slice(&(self.rdata.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.rdata);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DnsMessage {
    pub header: DnsHeader,
    pub question: Option<Question>,
    pub answers: Vec<AddressRecord>,
    /// Pass-through records: non-address answers and the authority and
    /// additional sections.
    pub raw_extra: Vec<RawRecord>,
}

impl DnsMessage {
    /// A recursion-desired query with the given id.
    pub fn query(id: u16, question: Question) -> Self {
        DnsMessage {
            header: DnsHeader {
                id,
                rd: true,
                ..DnsHeader::default()
            },
            question: Some(question),
            ..DnsMessage::default()
        }
    }

    /// An empty response echoing the id, opcode, RD bit and question of `query`.
    pub fn response_to(query: &DnsMessage, rcode: Rcode) -> Self {
        DnsMessage {
            header: DnsHeader {
                id: query.header.id,
                qr: true,
                opcode: query.header.opcode,
                rd: query.header.rd,
                ra: true,
                rcode,
                ..DnsHeader::default()
            },
            question: query.question.clone(),
            ..DnsMessage::default()
        }
    }

    pub fn has_edns(&self) -> bool {
        self.raw_extra
            .iter()
            .any(|r| r.section == Section::Additional && r.rtype == RecordType::OPT)
    }

    fn section_count(&self, section: Section) -> usize {
        let extra = self.raw_extra.iter().filter(|r| r.section == section).count();
        match section {
            Section::Answer => self.answers.len() + extra,
            _ => extra,
        }
    }
}

/// Serializes `msg` without name compression, failing if the result would
/// exceed `limit` bytes.
pub fn encode_message(msg: &DnsMessage, limit: usize) -> Result<Vec<u8>, EncodeError> {
    let counts = [
        usize::from(msg.question.is_some()),
        msg.section_count(Section::Answer),
        msg.section_count(Section::Authority),
        msg.section_count(Section::Additional),
    ];
    for (count, section) in counts[1..]
        .iter()
        .zip([Section::Answer, Section::Authority, Section::Additional])
    {
        if *count > usize::from(u16::MAX) {
            return Err(EncodeError::TooManyRecords(section));
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + 64 + msg.answers.len() * 32);
    out.extend_from_slice(&msg.header.id.to_be_bytes());
    out.extend_from_slice(&msg.header.flags().to_be_bytes());
    for count in counts {
        out.extend_from_slice(&(count as u16).to_be_bytes());
    }
    if let Some(q) = &msg.question {
        q.qname.write_to(&mut out);
        out.extend_from_slice(&q.qtype.0.to_be_bytes());
        out.extend_from_slice(&q.qclass.to_be_bytes());
    }

    // Raw answer records go back to their original positions; address
    // records fill the remaining slots in order.
    let mut raw_answers: Vec<&RawRecord> = msg
        .raw_extra
        .iter()
        .filter(|r| r.section == Section::Answer)
        .collect();
    raw_answers.sort_by_key(|r| r.position);
    let mut raw_iter = raw_answers.into_iter().peekable();
    let mut addr_iter = msg.answers.iter();
    for slot in 0..counts[1] {
        match raw_iter.peek() {
            Some(raw) if raw.position <= slot => {
                raw.write_to(&mut out);
                raw_iter.next();
            }
            _ => match addr_iter.next() {
                Some(rec) => rec.write_to(&mut out),
                None => {
                    if let Some(raw) = raw_iter.next() {
                        raw.write_to(&mut out);
                    }
                }
            },
        }
    }
    for section in [Section::Authority, Section::Additional] {
        for raw in msg.raw_extra.iter().filter(|r| r.section == section) {
            raw.write_to(&mut out);
        }
    }

    if out.len() > limit {
        return Err(EncodeError::MessageTooLarge {
            size: out.len(),
            limit,
        });
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(DecodeError::Truncated(self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn name(&mut self) -> Result<Name, DecodeError> {
        let (name, next) = read_name(self.buf, self.pos)?;
        self.pos = next;
        Ok(name)
    }
}

/// Reads a possibly compressed name starting at `start`. Returns the name and
/// the offset just past its in-place encoding.
fn read_name(buf: &[u8], start: usize) -> Result<(Name, usize), DecodeError> {
    let mut labels = Vec::new();
    let mut wire_len = 1;
    let mut pos = start;
    let mut resume = None;
    let mut hops = 0;
    loop {
        let len = *buf.get(pos).ok_or(DecodeError::Truncated(pos))?;
        match len & 0xc0 {
            0x00 => {
                if len == 0 {
                    pos += 1;
                    break;
                }
                let len = usize::from(len);
                wire_len += 1 + len;
                if wire_len > MAX_NAME_WIRE_LEN {
                    return Err(DecodeError::LabelOverrun(pos));
                }
                let label = buf
                    .get(pos + 1..pos + 1 + len)
                    .ok_or(DecodeError::Truncated(pos))?;
                labels.push(label.to_vec());
                pos += 1 + len;
            }
            0xc0 => {
                let lo = *buf.get(pos + 1).ok_or(DecodeError::Truncated(pos))?;
                let target = (usize::from(len & 0x3f) << 8) | usize::from(lo);
                // Pointers must go strictly backwards; with the hop cap this
                // rules out cycles.
                hops += 1;
                if target >= pos || hops > MAX_POINTER_HOPS {
                    return Err(DecodeError::PointerLoop(pos));
                }
                if resume.is_none() {
                    resume = Some(pos + 2);
                }
                pos = target;
            }
            _ => return Err(DecodeError::BadLabelType(pos)),
        }
    }
    Ok((Name { labels }, resume.unwrap_or(pos)))
}

/// Re-encodes rdata of name-bearing types with every embedded name expanded.
fn decompress_rdata(
    buf: &[u8],
    rtype: RecordType,
    start: usize,
    len: usize,
) -> Result<Vec<u8>, DecodeError> {
    let end = start + len;
    let bad = || DecodeError::BadRdata { rtype, len };
    let mut out = Vec::with_capacity(len);
    let mut pos = start;
    let name_at = |pos: &mut usize, out: &mut Vec<u8>| -> Result<(), DecodeError> {
        let (name, next) = read_name(buf, *pos)?;
        if next > end {
            return Err(bad());
        }
        name.write_to(out);
        *pos = next;
        Ok(())
    };
    match rtype {
        RecordType::NS | RecordType::CNAME | RecordType::PTR | RecordType::DNAME => {
            name_at(&mut pos, &mut out)?;
        }
        RecordType::MX => {
            if len < 3 {
                return Err(bad());
            }
            out.extend_from_slice(&buf[pos..pos + 2]);
            pos += 2;
            name_at(&mut pos, &mut out)?;
        }
        RecordType::SOA => {
            name_at(&mut pos, &mut out)?;
            name_at(&mut pos, &mut out)?;
            if end - pos != 20 {
                return Err(bad());
            }
            out.extend_from_slice(&buf[pos..end]);
            pos = end;
        }
        _ => {
            out.extend_from_slice(&buf[start..end]);
            pos = end;
        }
    }
    if pos != end {
        return Err(bad());
    }
    Ok(out)
}

/// Parses a complete DNS message. Non-address answers and the authority and
/// additional sections land in `raw_extra`.
pub fn decode_message(wire: &[u8]) -> Result<DnsMessage, DecodeError> {
    let mut r = Reader { buf: wire, pos: 0 };
    let id = r.u16()?;
    let flags = r.u16()?;
    let qdcount = r.u16()?;
    let ancount = r.u16()?;
    let nscount = r.u16()?;
    let arcount = r.u16()?;
    let header = DnsHeader::from_flags(id, flags);

    let question = match qdcount {
        0 => None,
        1 => {
            let qname = r.name()?;
            let qtype = RecordType(r.u16()?);
            let qclass = r.u16()?;
            Some(Question {
                qname,
                qtype,
                qclass,
            })
        }
        _ => return Err(DecodeError::CountMismatch("more than one question")),
    };

    let mut msg = DnsMessage {
        header,
        question,
        answers: Vec::new(),
        raw_extra: Vec::new(),
    };
    for (section, count) in [
        (Section::Answer, ancount),
        (Section::Authority, nscount),
        (Section::Additional, arcount),
    ] {
        for position in 0..usize::from(count) {
            let name = r.name()?;
            let rtype = RecordType(r.u16()?);
            let class = r.u16()?;
            let ttl = r.u32()?;
            let rdlen = usize::from(r.u16()?);
            let rdata_start = r.pos;
            let rdata = r.take(rdlen)?;
            if section == Section::Answer && class == CLASS_IN && rtype.is_address() {
                let address = match (rtype, rdata.len()) {
                    (RecordType::A, 4) => {
                        IpAddr::V4(Ipv4Addr::new(rdata[0], rdata[1], rdata[2], rdata[3]))
                    }
                    (RecordType::AAAA, 16) => {
                        let mut octets = [0u8; 16];
                        octets.copy_from_slice(rdata);
                        IpAddr::V6(Ipv6Addr::from(octets))
                    }
                    _ => return Err(DecodeError::BadRdata { rtype, len: rdlen }),
                };
                msg.answers.push(AddressRecord { name, ttl, address });
            } else {
                let rdata = decompress_rdata(wire, rtype, rdata_start, rdlen)?;
                msg.raw_extra.push(RawRecord {
                    section,
                    position,
                    name,
                    rtype,
                    class,
                    ttl,
                    rdata,
                });
            }
        }
    }
    if r.pos != wire.len() {
        return Err(DecodeError::CountMismatch("trailing bytes after last record"));
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn name(s: &str) -> Name {
        s.parse().unwrap()
    }

    fn unhex(s: &str) -> Vec<u8> {
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }

    // Produced by dnspython 2.8: make_query("example.com", "A", use_edns=False), id 0x1234.
    const EXAMPLE_COM_A_QUERY: &str = "123401000001000000000000076578616d706c6503636f6d0000010001";

    // dnspython response to the query above: CNAME to www.example.net plus two A
    // records, all owner names compressed.
    const COMPRESSED_CNAME_RESPONSE: &str = "123481000001000300000000076578616d706c6503636f6d0000010001\
        c00c000500010000012c001103777777076578616d706c65036e657400\
        c029000100010000003c0004c0000202c029000100010000003c0004c0000201";

    #[test]
    fn minimal_header_round_trip() {
        let msg = DnsMessage::default();
        let wire = encode_message(&msg, MAX_MESSAGE_LEN).unwrap();
        assert_eq!(wire, vec![0u8; 12]);
        let back = decode_message(&wire).unwrap();
        assert!(back.question.is_none());
        assert!(back.answers.is_empty());
        assert!(!back.header.qr);
    }

    #[test]
    fn decodes_reference_query() {
        let msg = decode_message(&unhex(EXAMPLE_COM_A_QUERY)).unwrap();
        assert_eq!(msg.header.id, 0x1234);
        assert!(msg.header.rd);
        assert!(!msg.header.qr);
        let q = msg.question.unwrap();
        assert_eq!(q.qname, name("example.com"));
        assert_eq!(q.qtype, RecordType::A);
        assert_eq!(q.qclass, CLASS_IN);
    }

    #[test]
    fn encodes_reference_query_bit_exact() {
        let msg = DnsMessage::query(0x1234, Question::new(name("example.com"), RecordType::A));
        let wire = encode_message(&msg, MAX_MESSAGE_LEN).unwrap();
        assert_eq!(wire, unhex(EXAMPLE_COM_A_QUERY));
    }

    #[test]
    fn follows_compression_and_keeps_cname_positional() {
        let wire = unhex(COMPRESSED_CNAME_RESPONSE);
        let msg = decode_message(&wire).unwrap();
        assert_eq!(msg.answers.len(), 2);
        assert_eq!(msg.answers[0].name, name("www.example.net"));
        assert_eq!(msg.answers[0].address, "192.0.2.2".parse::<IpAddr>().unwrap());
        assert_eq!(msg.answers[1].ttl, 60);
        assert_eq!(msg.raw_extra.len(), 1);
        let cname = &msg.raw_extra[0];
        assert_eq!((cname.section, cname.position), (Section::Answer, 0));
        assert_eq!(cname.rtype, RecordType::CNAME);
        // rdata stored expanded: www.example.net uncompressed
        assert_eq!(cname.rdata, {
            let mut v = Vec::new();
            name("www.example.net").write_to(&mut v);
            v
        });

        let reencoded = encode_message(&msg, MAX_MESSAGE_LEN).unwrap();
        assert_eq!(decode_message(&reencoded).unwrap(), msg);
        // the CNAME stays first in the answer section
        let first_rr = HEADER_LEN + name("example.com").wire_len() + 4;
        let (owner, after) = read_name(&reencoded, first_rr).unwrap();
        assert_eq!(owner, name("example.com"));
        assert_eq!(&reencoded[after..after + 2], &5u16.to_be_bytes());
    }

    #[test]
    fn rejects_pointer_loops() {
        let mut wire = vec![0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0];
        wire.extend_from_slice(&[0xc0, 12, 0, 1, 0, 1]);
        assert_eq!(decode_message(&wire), Err(DecodeError::PointerLoop(12)));

        // two labels pointing at each other via a forward pointer
        let mut wire = vec![0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0];
        wire.extend_from_slice(&[1, b'a', 0xc0, 16, 1, b'b', 0xc0, 12]);
        assert!(matches!(decode_message(&wire), Err(DecodeError::PointerLoop(_))));
    }

    #[test]
    fn rejects_truncation_and_count_mismatch() {
        let full = unhex(EXAMPLE_COM_A_QUERY);
        for cut in 0..full.len() {
            assert!(decode_message(&full[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = full.clone();
        extra.push(0);
        assert!(matches!(
            decode_message(&extra),
            Err(DecodeError::CountMismatch(_))
        ));
        let mut two_questions = full;
        two_questions[5] = 2;
        assert!(matches!(
            decode_message(&two_questions),
            Err(DecodeError::CountMismatch(_))
        ));
    }

    #[test]
    fn rejects_bad_address_rdata() {
        let mut msg = DnsMessage::response_to(
            &DnsMessage::query(1, Question::new(name("a.b"), RecordType::A)),
            Rcode::NoError,
        );
        msg.answers
            .push(AddressRecord::new(name("a.b"), 5, "10.0.0.1".parse().unwrap()));
        let mut wire = encode_message(&msg, MAX_MESSAGE_LEN).unwrap();
        // rewrite the A record's rdlength to 3 and drop one byte
        let rdlen_at = wire.len() - 6;
        wire[rdlen_at..rdlen_at + 2].copy_from_slice(&3u16.to_be_bytes());
        wire.pop();
        assert_eq!(
            decode_message(&wire),
            Err(DecodeError::BadRdata {
                rtype: RecordType::A,
                len: 3
            })
        );
    }

    #[test]
    fn rejects_overlong_names() {
        let mut wire = vec![0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0];
        for _ in 0..5 {
            wire.push(63);
            wire.extend(std::iter::repeat_n(b'x', 63));
        }
        wire.extend_from_slice(&[0, 0, 1, 0, 1]);
        assert!(matches!(decode_message(&wire), Err(DecodeError::LabelOverrun(_))));
    }

    #[test]
    fn nine_record_response_counts() {
        let q = DnsMessage::query(7, Question::new(name("pool.ntp.org"), RecordType::A));
        let mut resp = DnsMessage::response_to(&q, Rcode::NoError);
        for i in 0..9u8 {
            resp.answers.push(AddressRecord::new(
                name("pool.ntp.org"),
                60,
                IpAddr::V4(Ipv4Addr::new(192, 0, 2, i)),
            ));
        }
        let wire = encode_message(&resp, MAX_MESSAGE_LEN).unwrap();
        assert_eq!(u16::from_be_bytes([wire[6], wire[7]]), 9);
    }

    #[test]
    fn ttl_clamped_on_emission() {
        let mut msg = DnsMessage::default();
        msg.answers
            .push(AddressRecord::new(name("x"), u32::MAX, "::1".parse().unwrap()));
        let back = decode_message(&encode_message(&msg, MAX_MESSAGE_LEN).unwrap()).unwrap();
        assert_eq!(back.answers[0].ttl, MAX_TTL);
    }

    #[test]
    fn message_too_large() {
        let mut msg = DnsMessage::default();
        for i in 0..40u8 {
            msg.answers
                .push(AddressRecord::new(name("pool.ntp.org"), 1, IpAddr::V6(Ipv6Addr::from([i; 16]))));
        }
        match encode_message(&msg, UDP_CLASSIC_LIMIT) {
            Err(EncodeError::MessageTooLarge { size, limit }) => {
                assert_eq!(limit, 512);
                assert_eq!(size, 12 + 40 * (14 + 10 + 16));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn names_compare_case_insensitively() {
        assert_eq!(name("Example.COM"), name("example.com"));
        assert_eq!(name("example.com."), name("example.com"));
        assert!(name("a.pool.NTP.org").is_subdomain_of(&name("pool.ntp.org")));
        assert!(!name("pool.ntp.org").is_subdomain_of(&name("a.pool.ntp.org")));
        assert!(!name("xpool.ntp.org").is_subdomain_of(&name("pool.ntp.org")));
    }

    #[test]
    fn name_parse_limits_and_escapes() {
        assert!(matches!("a..b".parse::<Name>(), Err(NameError::EmptyLabel(_))));
        assert_eq!(
            "x".repeat(64).parse::<Name>().unwrap_err(),
            NameError::LabelTooLong
        );
        let long = vec!["y".repeat(63); 4].join(".");
        assert_eq!(long.parse::<Name>().unwrap_err(), NameError::NameTooLong);
        let escaped = name("a\\.b.c\\032d");
        assert_eq!(escaped.labels()[0], b"a.b");
        assert_eq!(escaped.labels()[1], b"c d");
        assert_eq!(escaped.to_string(), "a\\.b.c\\032d");
    }
}
