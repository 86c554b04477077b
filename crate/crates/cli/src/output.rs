//! File formats written by the subcommands.
//!
//! JSON documents are wrapped with a top-level `schema_version`. CSV files keep
//! their fixed headers; `manifest.json` records the schema version for them.

use std::path::{Path, PathBuf};

use serde::Serialize;
use uavrisk_core::profiles::HeatmapGrid;
use uavrisk_core::ttc::TtcRecord;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const TTC_HEADER: [&str; 10] = [
    "frame",
    "id_a",
    "id_b",
    "category_a",
    "category_b",
    "distance_m",
    "rel_speed_mps",
    "closing_speed_mps",
    "ttc_s",
    "critical",
];

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

pub fn json_document<T: Serialize>(body: &T) -> Result<String, CliError> {
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn csv_to_string<F>(header: &[&str], fill: F) -> Result<String, CliError>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let built = w
        .write_record(header)
        .and_then(|_| fill(&mut w))
        .and_then(|_| w.flush().map_err(csv::Error::from));
    built.map_err(|e| CliError::Config(format!("csv serialisation failed: {e}")))?;
    let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn ttc_csv(records: &[TtcRecord]) -> Result<String, CliError> {
    csv_to_string(&TTC_HEADER, |w| {
        for r in records {
            let g = &r.geometry;
            w.write_record([
                g.frame.to_string(),
                g.id_a.to_string(),
                g.id_b.to_string(),
                r.category_a.to_string(),
                r.category_b.to_string(),
                g.distance.to_string(),
                g.rel_speed.to_string(),
                g.closing_speed.to_string(),
                r.ttc.map(|t| t.to_string()).unwrap_or_default(),
                r.critical.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn heatmap_csv(grid: &HeatmapGrid) -> Result<String, CliError> {
    csv_to_string(&["i", "j", "intensity"], |w| {
        for ((i, j), v) in &grid.cells {
            w.write_record([i.to_string(), j.to_string(), v.to_string()])?;
        }
        Ok(())
    })
}

pub fn rows_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    csv_to_string(header, |w| {
        for row in rows {
            w.write_record(row)?;
        }
        Ok(())
    })
}

/// Collects artifacts for one command and writes them, plus a manifest, into a directory.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    command: &'static str,
    files: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    files: Vec<&'a str>,
}

impl OutputSet {
    pub fn new(dir: &Path, command: &'static str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            command,
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, content: String) {
        self.files.push((name.into(), content));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, body: &T) -> Result<(), CliError> {
        let text = json_document(body)?;
        self.add(name, text);
        Ok(())
    }

    pub fn write(self) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let manifest = json_document(&Manifest {
            command: self.command,
            files: self.files.iter().map(|(n, _)| n.as_str()).collect(),
        })?;
        let mut written = Vec::with_capacity(self.files.len() + 1);
        for (name, content) in self
            .files
            .iter()
            .map(|(n, c)| (n.as_str(), c.as_str()))
            .chain(std::iter::once(("manifest.json", manifest.as_str())))
        {
            let path = self.dir.join(name);
            std::fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use uavrisk_core::calibration::KinematicState;
    use uavrisk_core::trajectory_io::Category;
    use uavrisk_core::ttc::{evaluate_pair, AssessParams};
    use uavrisk_core::Vec2;

    fn state(id: u32, x: f64, vx: f64) -> KinematicState {
        KinematicState {
            id,
            category: Category::Car,
            frame: 3,
            position: Vec2::new(x, 0.0),
            velocity: Vec2::new(vx, 0.0),
            speed: vx.abs(),
        }
    }

    #[test]
    fn ttc_rows_follow_header() {
        let params = AssessParams::default();
        let closing = evaluate_pair(&state(1, 0.0, 2.0), &state(2, 10.0, -2.0), &params);
        let apart = evaluate_pair(&state(1, 0.0, -1.0), &state(2, 10.0, 1.0), &params);
        let text = ttc_csv(&[closing, apart]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TTC_HEADER.join(","));
        assert_eq!(lines[1], "3,1,2,car,car,10,4,4,2.5,false");
        assert_eq!(lines[2], "3,1,2,car,car,10,2,-2,,false");
    }

    #[test]
    fn json_carries_schema_version() {
        #[derive(Serialize)]
        struct Body {
            frames: Vec<u32>,
        }
        let text = json_document(&Body { frames: vec![1, 2] }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["frames"][1], 2);
    }
}
