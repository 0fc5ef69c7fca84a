//! Append-only JSON-lines log of sensor input, decisions and operator
//! actions, grouped into ticks closed by an explicit end marker.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corridor::CorridorConfig;
use crate::error::LogError;
use crate::guard::{Decision, GuardConfig};
use crate::sim::SensorReading;

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format_version: u32,
    pub corridor: CorridorConfig,
    pub corridor_digest: String,
    /// SHA-256 of the policy file bytes.
    pub policy_sha256: String,
    pub guard: GuardConfig,
    pub mode: LoopMode,
    /// Free-form run description (scenario, seed).
    #[serde(default)]
    pub run: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header(Box<LogHeader>),
    Sensor {
        tick: u64,
        reading: SensorReading,
    },
    /// Operator action applied at the start of `tick`.
    Journal {
        tick: u64,
        entry: serde_json::Value,
    },
    Decision(Decision),
    TickEnd {
        tick: u64,
        t_s: f64,
        degraded: bool,
    },
}

/// Everything recorded for one completed tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickRecord {
    pub tick: u64,
    pub t_s: f64,
    pub degraded: bool,
    pub sensors: Vec<SensorReading>,
    pub journal: Vec<serde_json::Value>,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogContents {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    /// Records after the last tick-end marker (an interrupted tick).
    pub partial_records: usize,
    /// Byte length of the log up to and including the last complete tick.
    pub complete_len: u64,
}

impl LogContents {
    pub fn decisions(&self) -> impl Iterator<Item = &Decision> {
        self.ticks.iter().flat_map(|t| &t.decisions)
    }
}

pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    /// Creates a new log, writing the header line.
    pub fn create(path: impl AsRef<Path>, header: LogHeader) -> Result<Self, LogError> {
        let file = File::create(path)?;
        let mut w = LogWriter { out: BufWriter::new(file) };
        w.write(&LogRecord::Header(Box::new(header)))?;
        w.sync()?;
        Ok(w)
    }

    /// Opens an existing log for appending after truncating it to `len` bytes.
    pub fn resume(path: impl AsRef<Path>, len: u64) -> Result<Self, LogError> {
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(len)?;
        let mut file = file;
        std::io::Seek::seek(&mut file, std::io::SeekFrom::End(0))?;
        Ok(LogWriter { out: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &LogRecord) -> Result<(), LogError> {
        let line = serde_json::to_string(record).map_err(|e| LogError::Parse { line: 0, reason: e.to_string() })?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    /// Writes a whole tick and its end marker, then flushes to disk.
    pub fn write_tick(&mut self, tick: &TickRecord) -> Result<(), LogError> {
        for r in &tick.sensors {
            self.write(&LogRecord::Sensor { tick: tick.tick, reading: r.clone() })?;
        }
        for j in &tick.journal {
            self.write(&LogRecord::Journal { tick: tick.tick, entry: j.clone() })?;
        }
        for d in &tick.decisions {
            self.write(&LogRecord::Decision(d.clone()))?;
        }
        self.write(&LogRecord::TickEnd { tick: tick.tick, t_s: tick.t_s, degraded: tick.degraded })?;
        self.sync()
    }

    pub fn sync(&mut self) -> Result<(), LogError> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }
}

/// Parses a log. Malformed lines are errors except an unterminated final
/// line, which is treated as part of an interrupted tick.
pub fn read_log(path: impl AsRef<Path>) -> Result<LogContents, LogError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut ticks = Vec::new();
    let mut current = TickRecord::default();
    let mut partial = 0usize;
    let mut offset = 0u64;
    let mut complete_len = 0u64;
    let mut line_no = 0usize;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        offset += n as u64;
        let terminated = buf.ends_with('\n');
        let text = buf.trim_end();
        if text.is_empty() {
            continue;
        }
        let record: LogRecord = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(_) if !terminated => {
                partial += 1;
                break;
            }
            Err(e) => return Err(LogError::Parse { line: line_no, reason: e.to_string() }),
        };
        match record {
            LogRecord::Header(h) => {
                if header.is_some() {
                    return Err(LogError::Parse { line: line_no, reason: "duplicate header".into() });
                }
                if h.format_version != LOG_FORMAT_VERSION {
                    return Err(LogError::Parse {
                        line: line_no,
                        reason: format!("unsupported version {}", h.format_version),
                    });
                }
                header = Some(*h);
                complete_len = offset;
                continue;
            }
            _ if header.is_none() => {
                return Err(LogError::Parse { line: line_no, reason: "record before header".into() });
            }
            LogRecord::Sensor { tick, reading } => {
                current.tick = tick;
                current.sensors.push(reading);
            }
            LogRecord::Journal { tick, entry } => {
                current.tick = tick;
                current.journal.push(entry);
            }
            LogRecord::Decision(d) => {
                current.tick = d.tick;
                current.decisions.push(d);
            }
            LogRecord::TickEnd { tick, t_s, degraded } => {
                if let Some(prev) = ticks.last().map(|t: &TickRecord| t.tick) {
                    if tick != prev + 1 {
                        return Err(LogError::Parse { line: line_no, reason: format!("tick {tick} follows {prev}") });
                    }
                }
                let mut done = std::mem::take(&mut current);
                done.tick = tick;
                done.t_s = t_s;
                done.degraded = degraded;
                ticks.push(done);
                partial = 0;
                complete_len = offset;
                continue;
            }
        }
        partial += 1;
    }
    let header = header.ok_or(LogError::Parse { line: 1, reason: "missing header".into() })?;
    Ok(LogContents { header, ticks, partial_records: partial, complete_len })
}

/// Like [`read_log`], but an interrupted final tick is an error.
pub fn read_complete_log(path: impl AsRef<Path>) -> Result<LogContents, LogError> {
    let log = read_log(path)?;
    if log.partial_records > 0 {
        let lines =
            1 + log.ticks.iter().map(|t| t.sensors.len() + t.journal.len() + t.decisions.len() + 1).sum::<usize>();
        return Err(LogError::Truncated { line: lines });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::degraded_decisions;
    use crate::sim::training_corridor;

    fn header() -> LogHeader {
        let corridor = training_corridor();
        LogHeader {
            format_version: LOG_FORMAT_VERSION,
            corridor_digest: corridor.digest(),
            corridor,
            policy_sha256: "00".into(),
            guard: GuardConfig::default(),
            mode: LoopMode::Open,
            run: serde_json::json!({"seed": 1}),
        }
    }

    fn tick(k: u64) -> TickRecord {
        let c = training_corridor();
        TickRecord {
            tick: k,
            t_s: 30.0 * (k + 1) as f64,
            degraded: false,
            sensors: vec![SensorReading {
                sensor_id: "TS1".into(),
                timestamp_s: 30.0 * (k + 1) as f64,
                speed: vec![61.25; 4],
                volume: vec![15.0; 4],
                occupancy: vec![0.1; 4],
            }],
            journal: if k == 1 { vec![serde_json::json!({"op": "pause"})] } else { Vec::new() },
            decisions: degraded_decisions(&c, &c.max_limits(), k, 30.0 * (k + 1) as f64),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut w = LogWriter::create(&path, header()).unwrap();
        for k in 0..3 {
            w.write_tick(&tick(k)).unwrap();
        }
        drop(w);
        let log = read_complete_log(&path).unwrap();
        assert_eq!(log.header, header());
        assert_eq!(log.ticks, (0..3).map(tick).collect::<Vec<_>>());
        assert_eq!(log.complete_len, std::fs::metadata(&path).unwrap().len());
    }

    #[test]
    fn interrupted_tick_detected_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut w = LogWriter::create(&path, header()).unwrap();
        w.write_tick(&tick(0)).unwrap();
        w.write(&LogRecord::Decision(tick(1).decisions[0].clone())).unwrap();
        w.sync().unwrap();
        drop(w);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"kind\":\"decis").unwrap();
        drop(f);
        let log = read_log(&path).unwrap();
        assert_eq!(log.ticks.len(), 1);
        assert_eq!(log.partial_records, 2);
        assert!(matches!(read_complete_log(&path), Err(LogError::Truncated { .. })));
        let mut w = LogWriter::resume(&path, log.complete_len).unwrap();
        w.write_tick(&tick(1)).unwrap();
        drop(w);
        let log = read_complete_log(&path).unwrap();
        assert_eq!(log.ticks.len(), 2);
        assert_eq!(log.ticks[1], tick(1));
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut w = LogWriter::create(&path, header()).unwrap();
        w.write_tick(&tick(0)).unwrap();
        drop(w);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"not json\n").unwrap();
        drop(f);
        match read_log(&path) {
            Err(LogError::Parse { line, .. }) => assert_eq!(line, 2 + 1 + 8 + 1),
            other => panic!("{other:?}"),
        }
    }
}
