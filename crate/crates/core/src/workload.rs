//! Workload scripts and the seeded document generators they draw from.
//!
//! One command per line; `#` starts a comment.
//!
//! ```text
//! INGEST 200 mixed          # generators: rows, text, mixed
//! UPDATE 20                 # new versions of random base documents
//! QUERY SEARCH acme k=5 facets=/json/city
//! QUERY SCAN
//! QUERY ANALYZE 400         # one grid task of 400 work units
//! QUERY CANONICAL acme      # search + entity facets + materialize
//! FAIL 3                    # node id
//! FAIL leader 0             # current leader of consistency group 0
//! JOIN data 10              # flavor and compute capacity
//! WAIT 50
//! QUIESCE pipeline          # index | pipeline | all (default)
//! ```

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::formats::{ColumnDef, ColumnType, RelationalRow};
use crate::model::{Path, SourceFormat, TypedValue};
use crate::query::Flavor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    /// Relational rows with a fixed order schema.
    Rows,
    /// Plain-text notes mentioning companies, emails and codes.
    Text,
    /// All five source formats in rotation.
    Mixed,
}

impl FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rows" => Ok(Generator::Rows),
            "text" => Ok(Generator::Text),
            "mixed" => Ok(Generator::Mixed),
            other => Err(format!("unknown generator {other:?} (expected rows, text or mixed)")),
        }
    }
}

/// Which asynchronous work a quiesce waits for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Barrier {
    /// Every persisted version is indexed and no index partition is lost.
    Index,
    /// The index barrier plus no discovery work outstanding.
    Pipeline,
    /// No task outstanding, no undetected failure, nothing to repair.
    All,
}

impl FromStr for Barrier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "index" => Ok(Barrier::Index),
            "pipeline" => Ok(Barrier::Pipeline),
            "all" => Ok(Barrier::All),
            other => Err(format!("unknown barrier {other:?} (expected index, pipeline or all)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuerySpec {
    Search { terms: Vec<String>, k: usize, facets: Vec<Path> },
    Scan,
    Analyze { work: u64 },
    Canonical { term: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Ingest { count: usize, generator: Generator },
    Update { count: usize },
    Query(QuerySpec),
    Fail { node: u64 },
    FailLeader { group: u32 },
    Join { flavor: Flavor, capacity: u64 },
    Wait { ticks: u64 },
    Quiesce(Barrier),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Script {
    /// Commands with their 1-based line numbers.
    pub commands: Vec<(usize, Command)>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("script line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

fn number<T: FromStr>(word: Option<&str>, what: &str) -> Result<T, String> {
    let word = word.ok_or_else(|| format!("missing {what}"))?;
    word.parse().map_err(|_| format!("{what} must be a non-negative integer, got {word:?}"))
}

fn parse_flavor(word: Option<&str>) -> Result<Flavor, String> {
    match word {
        Some("data") => Ok(Flavor::Data),
        Some("grid") => Ok(Flavor::Grid),
        Some("cluster") => Ok(Flavor::Cluster),
        Some(other) => Err(format!("unknown flavor {other:?}")),
        None => Err("missing flavor".into()),
    }
}

fn parse_query(words: &[&str]) -> Result<QuerySpec, String> {
    let (&kind, rest) = words.split_first().ok_or("QUERY needs a kind")?;
    match kind {
        "SEARCH" => {
            let (mut terms, mut k, mut facets) = (Vec::new(), 10, Vec::new());
            for word in rest {
                if let Some(v) = word.strip_prefix("k=") {
                    k = number(Some(v), "k")?;
                    if k == 0 {
                        return Err("k must be at least 1".into());
                    }
                } else if let Some(v) = word.strip_prefix("facets=") {
                    for p in v.split(',').filter(|p| !p.is_empty()) {
                        facets.push(Path::parse(p)?);
                    }
                } else {
                    terms.push(word.to_string());
                }
            }
            if terms.is_empty() {
                return Err("QUERY SEARCH needs at least one term".into());
            }
            Ok(QuerySpec::Search { terms, k, facets })
        }
        "SCAN" if rest.is_empty() => Ok(QuerySpec::Scan),
        "ANALYZE" if rest.len() == 1 => Ok(QuerySpec::Analyze { work: number(rest.first().copied(), "work")? }),
        "CANONICAL" if rest.len() == 1 => Ok(QuerySpec::Canonical { term: rest[0].to_string() }),
        "SCAN" | "ANALYZE" | "CANONICAL" => Err(format!("wrong number of arguments to QUERY {kind}")),
        other => Err(format!("unknown query kind {other:?}")),
    }
}

fn parse_line(words: &[&str]) -> Result<Command, String> {
    let (&verb, rest) = words.split_first().expect("blank lines are skipped");
    let arity = |n: usize| if rest.len() == n { Ok(()) } else { Err(format!("{verb} takes {n} argument(s)")) };
    match verb {
        "INGEST" => {
            arity(2)?;
            Ok(Command::Ingest { count: number(Some(rest[0]), "count")?, generator: rest[1].parse()? })
        }
        "UPDATE" => {
            arity(1)?;
            Ok(Command::Update { count: number(Some(rest[0]), "count")? })
        }
        "QUERY" => Ok(Command::Query(parse_query(rest)?)),
        "FAIL" => match rest {
            ["leader", group] => Ok(Command::FailLeader { group: number(Some(group), "group id")? }),
            [node] => Ok(Command::Fail { node: number(Some(node), "node id")? }),
            _ => Err("FAIL takes a node id or `leader <group>`".into()),
        },
        "JOIN" => {
            arity(2)?;
            let capacity: u64 = number(Some(rest[1]), "capacity")?;
            if capacity == 0 {
                return Err("capacity must be positive".into());
            }
            Ok(Command::Join { flavor: parse_flavor(Some(rest[0]))?, capacity })
        }
        "WAIT" => {
            arity(1)?;
            Ok(Command::Wait { ticks: number(Some(rest[0]), "ticks")? })
        }
        "QUIESCE" => match rest {
            [] => Ok(Command::Quiesce(Barrier::All)),
            [b] => Ok(Command::Quiesce(b.parse()?)),
            _ => Err("QUIESCE takes at most one barrier".into()),
        },
        other => Err(format!("unknown command {other:?}")),
    }
}

pub fn parse_script(text: &str) -> Result<Script, ScriptError> {
    let mut script = Script::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default();
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let command = parse_line(&words).map_err(|message| ScriptError { line: i + 1, message })?;
        script.commands.push((i + 1, command));
    }
    Ok(script)
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::Rows => "rows",
            Generator::Text => "text",
            Generator::Mixed => "mixed",
        })
    }
}

pub const CITIES: [&str; 6] = ["Oslo", "Rome", "Lima", "Kyoto", "Austin", "Lagos"];
pub const COMPANIES: [&str; 4] = ["Acme Corp", "Globex", "Initech", "Umbrella Corporation"];
pub const WORDS: [&str; 14] = [
    "invoice",
    "shipment",
    "contract",
    "order",
    "payment",
    "review",
    "audit",
    "supplier",
    "warehouse",
    "quarterly",
    "pricing",
    "delay",
    "renewal",
    "discount",
];
const PEOPLE: [&str; 6] = ["ada", "grace", "linus", "barbara", "ken", "margaret"];

/// The relational schema of the `rows` generator.
pub fn row_columns() -> Vec<ColumnDef> {
    let col = |name: &str, column_type| ColumnDef { name: name.into(), column_type };
    vec![
        col("id", ColumnType::Int),
        col("customer", ColumnType::Text),
        col("city", ColumnType::Text),
        col("amount", ColumnType::Decimal),
        col("quantity", ColumnType::Int),
        col("active", ColumnType::Bool),
    ]
}

/// Deterministic document source; every draw comes from the caller's RNG.
#[derive(Debug, Default)]
pub struct Corpus {
    next: u64,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    pub fn generate(&mut self, generator: Generator, rng: &mut ChaCha8Rng) -> (SourceFormat, Vec<u8>) {
        self.next += 1;
        let format = match generator {
            Generator::Rows => SourceFormat::RelationalRow,
            Generator::Text => SourceFormat::PlainText,
            Generator::Mixed => SourceFormat::ALL[(self.next as usize - 1) % SourceFormat::ALL.len()],
        };
        (format, self.payload(format, rng))
    }

    /// A fresh payload of the given format.
    pub fn payload(&mut self, format: SourceFormat, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let n = self.next;
        let city = *CITIES.choose(rng).expect("non-empty");
        let company = *COMPANIES.choose(rng).expect("non-empty");
        let amount = f64::from(rng.random_range(100..100_000u32)) / 100.0;
        let quantity = rng.random_range(1..50i64);
        match format {
            SourceFormat::RelationalRow => {
                let customer = if rng.random_bool(0.5) { company.to_string() } else { person(rng) };
                let row = RelationalRow {
                    columns: row_columns(),
                    values: vec![
                        Some(TypedValue::Integer(n as i64)),
                        Some(TypedValue::string(customer)),
                        Some(TypedValue::string(city)),
                        if rng.random_bool(0.9) { TypedValue::decimal(amount) } else { None },
                        Some(TypedValue::Integer(quantity)),
                        Some(TypedValue::Boolean(rng.random_bool(0.7))),
                    ],
                };
                row.to_payload()
            }
            SourceFormat::Delimited => format!("{n},{city},{}", word(rng)).into_bytes(),
            SourceFormat::JsonLike => serde_json::json!({
                "kind": word(rng),
                "city": city,
                "customer": company,
                "amount": amount,
                "note": sentence(rng),
            })
            .to_string()
            .into_bytes(),
            SourceFormat::XmlLike => format!(
                "<order id=\"{n}\"><customer>{company}</customer><city>{city}</city><total>{amount}</total><note>{}</note></order>",
                sentence(rng)
            )
            .into_bytes(),
            SourceFormat::PlainText => sentence(rng).into_bytes(),
        }
    }
}

fn word(rng: &mut ChaCha8Rng) -> &'static str {
    WORDS.choose(rng).expect("non-empty")
}

fn person(rng: &mut ChaCha8Rng) -> String {
    PEOPLE.choose(rng).expect("non-empty").to_string()
}

/// A short note: a few words, sometimes a company, an email or a code.
fn sentence(rng: &mut ChaCha8Rng) -> String {
    let mut parts: Vec<String> = (0..rng.random_range(3..7)).map(|_| word(rng).to_string()).collect();
    if rng.random_bool(0.6) {
        parts.push(format!("with {}", COMPANIES.choose(rng).expect("non-empty")));
    }
    if rng.random_bool(0.3) {
        parts.push(format!("contact {}@example.com", person(rng)));
    }
    if rng.random_bool(0.3) {
        parts.push(format!("ref AB-{}", rng.random_range(100..1000u32)));
    }
    parts.join(" ")
}
