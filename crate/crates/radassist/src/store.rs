//! On-disk layout under `data_dir`:
//!
//! ```text
//! studies/{id}/record.json   StudyRecord
//! studies/{id}/image.*       uploaded image (and raw header)
//! studies/{id}/mask.*        uploaded mask (and raw header)
//! sessions/{id}/meta.json    SessionMeta
//! sessions/{id}/events.jsonl one SessionEventRecord per line
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use radassist_core::imaging::{parse_nifti, parse_raw, ParseAs, Parsed};
use radassist_core::{
    CompletionSession, FeedbackEvent, ImagingError, LabelMask, LateralityRatio, OrganFeatureSet, RouteDecision,
    StudyDescriptor, VoxelVolume,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{path}: expected seq {expected}, found {found}")]
    SeqGap { path: PathBuf, expected: u64, found: u64 },
    #[error("stored image does not parse: {0}")]
    Imaging(#[from] ImagingError),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// How an uploaded volume or mask was encoded. File names are relative to
/// the study directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum StoredImage {
    Nifti { file: String },
    Raw { header: String, data: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub descriptor: StudyDescriptor,
    pub image: StoredImage,
    pub mask: StoredImage,
    /// Label id → organ name, as stored in the mask.
    pub label_table: BTreeMap<u32, String>,
    #[serde(default)]
    pub features: BTreeMap<String, OrganFeatureSet>,
    #[serde(default)]
    pub ratio: Option<LateralityRatio>,
    /// Absent when no routing rule matched the descriptor.
    pub route: Option<RouteDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub study_id: String,
    pub organ: String,
    pub feature_payload: String,
    pub initial_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEventRecord {
    pub session_id: String,
    /// 1-based, no gaps.
    pub seq: u64,
    pub event: FeedbackEvent,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Writes via a temporary file and rename so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(io_at(&tmp))?;
    f.write_all(bytes).map_err(io_at(&tmp))?;
    f.sync_data().map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Ids become directory names; anything but `[A-Za-z0-9_-]` is refused.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Store {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        for sub in ["studies", "sessions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        }
        Ok(Self { root: root.to_owned() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn study_dir(&self, id: &str) -> PathBuf {
        self.root.join("studies").join(id)
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    /// Creates the study directory and writes the uploaded files into it.
    pub fn put_study_files(&self, id: &str, files: &[(&str, &[u8])]) -> Result<(), StoreError> {
        let dir = self.study_dir(id);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        for (name, bytes) in files {
            write_atomic(&dir.join(name), bytes)?;
        }
        Ok(())
    }

    pub fn put_study(&self, record: &StudyRecord) -> Result<(), StoreError> {
        let dir = self.study_dir(&record.study_id);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let json = serde_json::to_vec_pretty(record).expect("record serializes");
        write_atomic(&dir.join("record.json"), &json)
    }

    pub fn get_study(&self, id: &str) -> Result<Option<StudyRecord>, StoreError> {
        let path = self.study_dir(id).join("record.json");
        if !valid_id(id) || !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    /// Parses the stored image and mask again.
    pub fn load_study_data(&self, record: &StudyRecord) -> Result<(VoxelVolume, LabelMask), StoreError> {
        let dir = self.study_dir(&record.study_id);
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(io_at(&p))
        };
        let parse = |stored: &StoredImage, target: ParseAs| -> Result<Parsed, StoreError> {
            Ok(match stored {
                StoredImage::Nifti { file } => parse_nifti(&read(file)?, target)?,
                StoredImage::Raw { header, data } => {
                    // the label table is authoritative in the record
                    let mut h: serde_json::Value = serde_json::from_slice(&read(header)?)
                        .map_err(|e| ImagingError::MalformedHeader(e.to_string()))?;
                    if let ParseAs::Mask(table) = &target {
                        let labels: BTreeMap<String, &String> =
                            table.iter().map(|(k, v)| (k.to_string(), v)).collect();
                        h["labels"] = serde_json::json!(labels);
                    }
                    parse_raw(h.to_string().as_bytes(), &read(data)?)?
                }
            })
        };
        let volume = match parse(&record.image, ParseAs::Image(record.descriptor.modality))? {
            Parsed::Volume(v) => v,
            Parsed::Mask(_) => return Err(ImagingError::MalformedHeader("image stored as a mask".into()).into()),
        };
        let mask = match parse(&record.mask, ParseAs::Mask(record.label_table.clone()))? {
            Parsed::Mask(m) => m,
            Parsed::Volume(_) => return Err(ImagingError::MaskDtypeNotInteger.into()),
        };
        Ok((volume, mask))
    }

    /// Writes the session metadata and an empty event log.
    pub fn create_session(&self, meta: &SessionMeta) -> Result<EventLog, StoreError> {
        let dir = self.session_dir(&meta.session_id);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        write_atomic(&dir.join("meta.json"), &serde_json::to_vec_pretty(meta).expect("meta serializes"))?;
        EventLog::open(&dir.join("events.jsonl"), &meta.session_id, 0)
    }

    /// Rebuilds a session from disk. `Ok(None)` when it does not exist.
    pub fn load_session(&self, id: &str) -> Result<Option<(SessionMeta, CompletionSession, EventLog)>, StoreError> {
        let dir = self.session_dir(id);
        if !valid_id(id) || !dir.join("meta.json").exists() {
            return Ok(None);
        }
        let meta: SessionMeta = read_json(&dir.join("meta.json"))?;
        let path = dir.join("events.jsonl");
        let records = read_event_log(&path)?;
        let session = CompletionSession::replay(
            &meta.session_id,
            &meta.organ,
            &meta.feature_payload,
            &meta.initial_text,
            records.iter().map(|r| r.event.clone()),
        );
        let log = EventLog::open(&path, id, records.len() as u64)?;
        Ok(Some((meta, session, log)))
    }
}

/// Reads an event log, dropping a torn final line (a write cut short by a
/// crash) and truncating the file to the last complete record.
pub fn read_event_log(path: &Path) -> Result<Vec<SessionEventRecord>, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_at(path)(e)),
    };
    let mut records = Vec::new();
    let mut good_end = 0usize;
    let mut line_no = 0usize;
    let mut rest = &bytes[..];
    while !rest.is_empty() {
        line_no += 1;
        let (line, complete) = match rest.iter().position(|&b| b == b'\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let consumed = line.len() + usize::from(complete);
        match serde_json::from_slice::<SessionEventRecord>(line) {
            Ok(r) if complete => {
                let expected = records.len() as u64 + 1;
                if r.seq != expected {
                    return Err(StoreError::SeqGap {
                        path: path.to_owned(),
                        expected,
                        found: r.seq,
                    });
                }
                records.push(r);
                good_end += consumed;
            }
            // unterminated tail: the append never finished
            _ if !complete => break,
            Ok(_) => unreachable!(),
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_owned(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        rest = &rest[consumed..];
    }
    if good_end < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_at(path))?;
        f.set_len(good_end as u64).map_err(io_at(path))?;
        f.sync_data().map_err(io_at(path))?;
    }
    Ok(records)
}

/// Append handle for one session's event log.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    session_id: String,
    file: File,
    last_seq: u64,
}

impl EventLog {
    fn open(path: &Path, session_id: &str, last_seq: u64) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_at(path))?;
        Ok(Self {
            path: path.to_owned(),
            session_id: session_id.to_owned(),
            file,
            last_seq,
        })
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Appends and syncs. All records go out in one write so a crash leaves
    /// at most one torn line, which the reader discards.
    pub fn append(&mut self, events: &[FeedbackEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for (i, event) in events.iter().enumerate() {
            let record = SessionEventRecord {
                session_id: self.session_id.clone(),
                seq: self.last_seq + 1 + i as u64,
                event: event.clone(),
            };
            serde_json::to_writer(&mut buf, &record).expect("record serializes");
            buf.push(b'\n');
        }
        self.file.write_all(&buf).map_err(io_at(&self.path))?;
        self.file.sync_data().map_err(io_at(&self.path))?;
        self.last_seq += events.len() as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use radassist_core::FeedbackKind;

    fn event(kind: FeedbackKind, t: u64, payload: &str) -> FeedbackEvent {
        FeedbackEvent {
            kind,
            timestamp: t,
            payload: payload.into(),
        }
    }

    fn meta(id: &str) -> SessionMeta {
        SessionMeta {
            session_id: id.into(),
            study_id: "st".into(),
            organ: "kidney".into(),
            feature_payload: "Left kidney volume: 170 cm3".into(),
            initial_text: "FINDINGS:".into(),
        }
    }

    #[test]
    fn session_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut log = store.create_session(&meta("s1")).unwrap();
        log.append(&[event(FeedbackKind::Proposed, 1, "The"), event(FeedbackKind::Accepted, 2, "The")])
            .unwrap();
        log.append(&[event(FeedbackKind::Edited, 3, "x y")]).unwrap();
        drop(log);
        let (m, s, log) = store.load_session("s1").unwrap().unwrap();
        assert_eq!(m, meta("s1"));
        assert_eq!(s.accepted_text(), "x y");
        assert_eq!(s.event_log().len(), 3);
        assert_eq!(log.last_seq(), 3);
        assert!(store.load_session("nope").unwrap().is_none());
        assert!(store.load_session("../x").unwrap().is_none());
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut log = store.create_session(&meta("s")).unwrap();
        log.append(&[event(FeedbackKind::Accepted, 1, "The")]).unwrap();
        let path = store.session_dir("s").join("events.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"session_id":"s","seq":2,"ev"#).unwrap();
        let records = read_event_log(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert!(fs::read(&path).unwrap().ends_with(b"}\n"));
        // appending after recovery continues the sequence
        let (_, _, mut log) = store.load_session("s").unwrap().unwrap();
        log.append(&[event(FeedbackKind::Edited, 2, "a")]).unwrap();
        assert_eq!(read_event_log(&path).unwrap()[1].seq, 2);
    }

    #[test]
    fn gaps_and_garbage_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let line = |seq: u64| {
            serde_json::to_string(&SessionEventRecord {
                session_id: "s".into(),
                seq,
                event: event(FeedbackKind::Edited, seq, "a"),
            })
            .unwrap()
        };
        fs::write(&path, format!("{}\n{}\n", line(1), line(3))).unwrap();
        assert!(matches!(read_event_log(&path), Err(StoreError::SeqGap { expected: 2, found: 3, .. })));
        fs::write(&path, format!("{}\nnot json\n{}\n", line(1), line(2))).unwrap();
        assert!(matches!(read_event_log(&path), Err(StoreError::Corrupt { line: 2, .. })));
    }

    #[test]
    fn ids_are_path_safe() {
        assert!(valid_id("3f2a-b_9"));
        assert!(!valid_id(""));
        assert!(!valid_id("../etc"));
        assert!(!valid_id("a/b"));
    }
}
