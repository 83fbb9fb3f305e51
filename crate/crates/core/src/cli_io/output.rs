//! Frames, `diagnostics.csv` and `summary.txt`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::mesh::{write_obj, TriMesh};

pub const CSV_NAME: &str = "diagnostics.csv";
pub const SUMMARY_NAME: &str = "summary.txt";

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:06}.obj")
}

fn is_frame_name(name: &str) -> bool {
    name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".obj")).is_some_and(|d| d.len() == 6 && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Frame files in `dir`, sorted by index.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(is_frame_name))
        .collect();
    frames.sort();
    Ok(frames)
}

/// Ordered `key: value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Summary {
        let entries = text.lines().filter_map(|l| l.split_once(':')).map(|(k, v)| (k.trim().to_string(), v.trim().to_string())).collect();
        Summary { entries }
    }
}

/// Files written by a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub frames: Vec<PathBuf>,
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub rows: usize,
}

/// Streams records and frames into an output directory.
pub struct OutputWriter {
    dir: PathBuf,
    csv_path: PathBuf,
    csv: BufWriter<File>,
    write_frames: bool,
    frame_every: usize,
    records: usize,
    frames: Vec<PathBuf>,
}

impl OutputWriter {
    /// Creates `dir` if needed and removes frames left by earlier runs.
    pub fn create(dir: &Path, write_frames: bool, frame_every: usize) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for stale in list_frames(dir)? {
            fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
        let csv_path = dir.join(CSV_NAME);
        let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut csv = BufWriter::new(file);
        writeln!(csv, "{}", DiagnosticsRecord::csv_header()).map_err(|e| Error::io(&csv_path, e))?;
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            csv_path,
            csv,
            write_frames,
            frame_every: frame_every.max(1),
            records: 0,
            frames: Vec::new(),
        })
    }

    /// Appends a CSV row, and a frame on every `frame_every`-th record.
    pub fn record(&mut self, record: &DiagnosticsRecord, mesh: &TriMesh) -> Result<()> {
        writeln!(self.csv, "{}", record.csv_row()).map_err(|e| Error::io(&self.csv_path, e))?;
        if self.write_frames && self.records.is_multiple_of(self.frame_every) {
            self.write_frame(record.t, mesh)?;
        }
        self.records += 1;
        Ok(())
    }

    /// Writes the final state as a frame unless it was just written.
    pub fn final_frame(&mut self, t: f64, mesh: &TriMesh) -> Result<()> {
        if self.write_frames && (self.records == 0 || !(self.records - 1).is_multiple_of(self.frame_every)) {
            self.write_frame(t, mesh)?;
        }
        Ok(())
    }

    fn write_frame(&mut self, t: f64, mesh: &TriMesh) -> Result<()> {
        let path = self.dir.join(frame_name(self.frames.len()));
        write_obj(mesh, &path, &[format!("t = {t:.17e}")])?;
        self.frames.push(path);
        Ok(())
    }

    pub fn finish(mut self, summary: &Summary) -> Result<Manifest> {
        self.csv.flush().map_err(|e| Error::io(&self.csv_path, e))?;
        let summary_path = self.dir.join(SUMMARY_NAME);
        fs::write(&summary_path, summary.render()).map_err(|e| Error::io(&summary_path, e))?;
        Ok(Manifest { frames: self.frames, csv: self.csv_path, summary: summary_path, rows: self.records })
    }
}

/// Writes a whole trajectory at once: one frame per entry of `frames`, one
/// CSV row per record, and the summary.
pub fn emit_outputs(frames: &[(f64, TriMesh)], records: &[DiagnosticsRecord], summary: &Summary, dir: &Path) -> Result<Manifest> {
    let mut w = OutputWriter::create(dir, false, 1)?;
    for r in records {
        w.record(r, &frames[0].1)?;
    }
    w.write_frames = true;
    for (t, mesh) in frames {
        w.write_frame(*t, mesh)?;
    }
    w.finish(summary)
}

/// Time stamp stored in a frame's header comment.
pub fn frame_time(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.trim().strip_prefix("t ="))
        .find_map(|v| v.trim().parse::<f64>().ok())
        .ok_or_else(|| Error::Parse { line: 0, msg: format!("{} has no `# t = ...` header", path.display()) })
}

/// Rows of a `diagnostics.csv`.
pub fn read_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == DiagnosticsRecord::csv_header() => {}
        _ => return Err(Error::Parse { line: 1, msg: "unexpected CSV header".into() }),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse { line: i + 1, msg: "non-numeric field".into() })?;
            if v.len() != 19 {
                return Err(Error::Parse { line: i + 1, msg: format!("expected 19 fields, got {}", v.len()) });
            }
            Ok(DiagnosticsRecord::from_values(&v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_cap, read_obj, CapSpec};

    fn record(t: f64) -> DiagnosticsRecord {
        DiagnosticsRecord { t, h_max: 2.0 + t, ..Default::default() }
    }

    #[test]
    fn five_frames_five_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = make_cap(&CapSpec::HemispherePlane { radius: 1.0, segments: 2 }).unwrap();
        let frames: Vec<(f64, TriMesh)> = (0..5).map(|i| (i as f64 * 0.01, mesh.clone())).collect();
        let records: Vec<DiagnosticsRecord> = (0..5).map(|i| record(i as f64 * 0.01)).collect();
        let mut summary = Summary::default();
        summary.push("stop_reason", "TimeReached");
        let m = emit_outputs(&frames, &records, &summary, dir.path()).unwrap();
        assert_eq!(m.frames.len(), 5);
        assert_eq!(list_frames(dir.path()).unwrap().len(), 5);
        assert!(dir.path().join("frame_000004.obj").exists());
        let rows = read_csv(&m.csv).unwrap();
        assert_eq!(rows, records);
        assert_eq!(read_obj(&m.frames[2]).unwrap().positions, mesh.positions);
        assert_eq!(frame_time(&m.frames[3]).unwrap(), 0.03);
        let s = Summary::parse(&fs::read_to_string(&m.summary).unwrap());
        assert_eq!(s.get("stop_reason"), Some("TimeReached"));
    }

    #[test]
    fn rerun_overwrites_identically_and_drops_stale_frames() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = make_cap(&CapSpec::HemispherePlane { radius: 1.0, segments: 2 }).unwrap();
        let write = |n: usize| {
            let mut w = OutputWriter::create(dir.path(), true, 1).unwrap();
            for i in 0..n {
                w.record(&record(i as f64), &mesh).unwrap();
            }
            w.finish(&Summary::default()).unwrap()
        };
        write(4);
        let first = fs::read(dir.path().join(CSV_NAME)).unwrap();
        write(2);
        write(4);
        assert_eq!(fs::read(dir.path().join(CSV_NAME)).unwrap(), first);
        write(2);
        assert_eq!(list_frames(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn frame_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = make_cap(&CapSpec::HemispherePlane { radius: 1.0, segments: 2 }).unwrap();
        let mut w = OutputWriter::create(dir.path(), true, 3).unwrap();
        for i in 0..7 {
            w.record(&record(i as f64), &mesh).unwrap();
        }
        w.final_frame(6.0, &mesh).unwrap();
        let m = w.finish(&Summary::default()).unwrap();
        assert_eq!(m.frames.len(), 3);
        assert_eq!(m.rows, 7);
    }

    #[test]
    fn unwritable_directory_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let target = blocker.join("out");
        match OutputWriter::create(&target, true, 1) {
            Err(Error::Io { path, .. }) => assert_eq!(path, target),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("expected an error"),
        }
    }
}
