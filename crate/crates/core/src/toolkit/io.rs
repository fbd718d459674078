//! Query batches (`o d t_o` per line) and answer records.
//!
//! An answer line reads `o d t_o kind value depth s_0 … s_depth [path a_1,…]`
//! where `s_k` are the ball sizes along the winning chain.

use thiserror::Error;

use crate::query::{AnswerKind, Query, QueryAnswer};

#[derive(Debug, Error, PartialEq)]
pub enum IoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

fn field<T: std::str::FromStr>(s: Option<&str>, line: usize, what: &str) -> Result<T, IoError> {
    let s = s.ok_or_else(|| err(line, format!("missing {what}")))?;
    s.parse().map_err(|_| err(line, format!("bad {what} {s:?}")))
}

pub fn parse_queries(text: &str) -> Result<Vec<Query>, IoError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut f = line.split_whitespace();
        let q = Query {
            origin: field(f.next(), i + 1, "origin")?,
            destination: field(f.next(), i + 1, "destination")?,
            departure: field(f.next(), i + 1, "departure")?,
        };
        if f.next().is_some() {
            return Err(err(i + 1, "trailing fields"));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn format_queries(queries: &[Query]) -> String {
    queries.iter().map(|q| format!("{} {} {}\n", q.origin, q.destination, q.departure)).collect()
}

/// One answer record.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerRecord {
    pub origin: u32,
    pub destination: u32,
    pub departure: f64,
    pub kind: AnswerKind,
    pub value: f64,
    pub depth: usize,
    pub ball_sizes: Vec<usize>,
    pub path: Option<Vec<u32>>,
}

impl AnswerRecord {
    pub fn from_answer(a: &QueryAnswer, path: Option<Vec<u32>>) -> Self {
        Self {
            origin: a.origin,
            destination: a.destination,
            departure: a.departure,
            kind: a.kind,
            value: a.value,
            depth: a.depth(),
            ball_sizes: a.ball_sizes(),
            path,
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = format!("{} {} {} {} {} {}", self.origin, self.destination, self.departure, self.kind.as_str(), self.value, self.depth);
        for b in &self.ball_sizes {
            s.push_str(&format!(" {b}"));
        }
        if let Some(p) = &self.path {
            let arcs: Vec<String> = p.iter().map(u32::to_string).collect();
            s.push_str(&format!(" path {}", arcs.join(",")));
        }
        s
    }

    pub fn parse_line(text: &str, line: usize) -> Result<Self, IoError> {
        let mut f = text.split_whitespace();
        let origin = field(f.next(), line, "origin")?;
        let destination = field(f.next(), line, "destination")?;
        let departure = field(f.next(), line, "departure")?;
        let kind_s: String = field(f.next(), line, "kind")?;
        let kind = AnswerKind::parse(&kind_s).ok_or_else(|| err(line, format!("unknown kind {kind_s:?}")))?;
        let value = field(f.next(), line, "value")?;
        let depth: usize = field(f.next(), line, "depth")?;
        let ball_sizes = (0..=depth).map(|_| field(f.next(), line, "ball size")).collect::<Result<Vec<usize>, _>>()?;
        let path = match f.next() {
            None => None,
            Some("path") => {
                let list: String = field(f.next(), line, "arc list")?;
                Some(list.split(',').filter(|s| !s.is_empty()).map(|a| field(Some(a), line, "arc")).collect::<Result<_, _>>()?)
            }
            Some(other) => return Err(err(line, format!("unexpected {other:?}"))),
        };
        if f.next().is_some() {
            return Err(err(line, "trailing fields"));
        }
        Ok(Self { origin, destination, departure, kind, value, depth, ball_sizes, path })
    }
}

pub fn parse_answers(text: &str) -> Result<Vec<AnswerRecord>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| AnswerRecord::parse_line(l, i + 1))
        .collect()
}
