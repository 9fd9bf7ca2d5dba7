//! Run logs: one CSV row per logging event plus a JSON-lines event stream.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::AgentEvent;
use crate::error::{Error, Result};

/// Column layout of the per-member part of a log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogLayout {
    /// `sparsity_k` and `loss_k` for `K` members.
    Value { members: usize },
    /// Per-critic columns prefixed `c1_` and `c2_`.
    ActorCritic { members: usize },
}

const FIXED: [&str; 6] = [
    "step",
    "wallclock_s",
    "episode_return",
    "eval_return",
    "champion_index",
    "behavior_index",
];

impl LogLayout {
    /// Number of sparsity (and loss) columns.
    pub fn slots(&self) -> usize {
        match *self {
            LogLayout::Value { members } => members,
            LogLayout::ActorCritic { members } => 2 * members,
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
        for kind in ["sparsity", "loss"] {
            match *self {
                LogLayout::Value { members } => {
                    cols.extend((0..members).map(|k| format!("{kind}_{k}")));
                }
                LogLayout::ActorCritic { members } => {
                    for critic in ["c1", "c2"] {
                        cols.extend((0..members).map(|k| format!("{critic}_{kind}_{k}")));
                    }
                }
            }
        }
        cols
    }

    pub fn from_header(header: &[String]) -> Result<Self> {
        let extra = header.len().saturating_sub(FIXED.len());
        let candidates = [
            LogLayout::Value { members: extra / 2 },
            LogLayout::ActorCritic { members: extra / 4 },
        ];
        candidates
            .into_iter()
            .find(|layout| layout.slots() > 0 && layout.header() == header)
            .ok_or_else(|| Error::Validation(format!("unrecognised log header {header:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub wallclock_s: f64,
    /// Return of the most recently completed training episode.
    pub episode_return: f64,
    /// Most recent evaluation return.
    pub eval_return: f64,
    pub champion_index: usize,
    pub behavior_index: usize,
    pub sparsities: Vec<f64>,
    pub losses: Vec<f64>,
}

/// A marker for a target update, selection or pruning event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub step: u64,
    /// Critic index (1 or 2) for actor-critic runs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub critic: Option<u8>,
    #[serde(flatten)]
    pub event: AgentEvent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub layout: LogLayout,
    pub records: Vec<LogRecord>,
    pub events: Vec<EventRecord>,
}

impl RunLog {
    pub fn new(layout: LogLayout) -> Self {
        Self {
            layout,
            records: Vec::new(),
            events: Vec::new(),
        }
    }

    /// Appends a record; steps must strictly increase.
    pub fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Validation(format!(
                    "log step {} does not follow {}",
                    record.step, last.step
                )));
            }
        }
        let slots = self.layout.slots();
        if record.sparsities.len() != slots || record.losses.len() != slots {
            return Err(Error::Shape(format!(
                "log record needs {slots} member columns"
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(self.layout.header()).map_err(io)?;
        for r in &self.records {
            let mut row = vec![
                r.step.to_string(),
                r.wallclock_s.to_string(),
                r.episode_return.to_string(),
                r.eval_return.to_string(),
                r.champion_index.to_string(),
                r.behavior_index.to_string(),
            ];
            row.extend(r.sparsities.iter().chain(&r.losses).map(f64::to_string));
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }

    /// Parses a CSV log; the event stream is left empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let parse_err = |line: usize, message: String| Error::Parse {
            offset: 0,
            record: Some(line),
            message,
        };
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| parse_err(0, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let layout = LogLayout::from_header(&header)?;
        let slots = layout.slots();
        let mut log = RunLog::new(layout);
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| parse_err(i, e.to_string()))?;
            let float = |c: usize| -> Result<f64> {
                row[c].parse().map_err(|_| {
                    parse_err(
                        i,
                        format!("bad number `{}` in column {}", &row[c], header[c]),
                    )
                })
            };
            let int = |c: usize| -> Result<u64> {
                row[c].parse().map_err(|_| {
                    parse_err(
                        i,
                        format!("bad integer `{}` in column {}", &row[c], header[c]),
                    )
                })
            };
            let base = FIXED.len();
            log.push(LogRecord {
                step: int(0)?,
                wallclock_s: float(1)?,
                episode_return: float(2)?,
                eval_return: float(3)?,
                champion_index: int(4)? as usize,
                behavior_index: int(5)? as usize,
                sparsities: (base..base + slots).map(float).collect::<Result<_>>()?,
                losses: (base + slots..base + 2 * slots)
                    .map(float)
                    .collect::<Result<_>>()?,
            })?;
        }
        Ok(log)
    }

    pub fn events_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("events serialize") + "\n")
            .collect()
    }

    pub fn parse_events(text: &str) -> Result<Vec<EventRecord>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    offset: 0,
                    record: Some(i),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn write(&self, csv_path: &Path, events_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()?)?;
        std::fs::write(events_path, self.events_jsonl())?;
        Ok(())
    }
}
