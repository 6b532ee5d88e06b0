//! JSON-lines dataset files.
//!
//! Line 1 is a header `{"format":"ptt-synth","version":1,"num_frames":N,"config":{..}}`.
//! Each following line is one frame:
//! `{"frame":i,"points":[[x,y,z,intensity],..],"invalid":[row,..],"gt":[{"id":..,"label":..,"box":[9 values]}]}`.
//! Box values are `x, y, z, w, l, h, theta, vx, vy`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Dataset, FrameSample, GtObject, PointCloud, SceneConfig};
use crate::geom::Box3D;

pub const FORMAT_NAME: &str = "ptt-synth";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    num_frames: usize,
    config: SceneConfig,
}

#[derive(Serialize, Deserialize)]
struct GtRecord {
    id: u64,
    label: String,
    #[serde(rename = "box")]
    bbox: [f64; 9],
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: usize,
    points: Vec<[f64; 4]>,
    invalid: Vec<usize>,
    gt: Vec<GtRecord>,
}

impl From<&FrameSample> for FrameRecord {
    fn from(f: &FrameSample) -> Self {
        let pc = &f.points;
        Self {
            frame: f.frame_index,
            points: pc
                .coords
                .iter()
                .zip(&pc.intensity)
                .map(|(p, &i)| [p[0], p[1], p[2], i])
                .collect(),
            invalid: (0..pc.len()).filter(|&i| !pc.valid[i]).collect(),
            gt: f
                .gt
                .iter()
                .map(|g| GtRecord {
                    id: g.id,
                    label: g.label.clone(),
                    bbox: g.bbox.to_array(),
                })
                .collect(),
        }
    }
}

impl FrameRecord {
    fn into_frame(self, line: usize) -> Result<FrameSample, DatasetError> {
        let n = self.points.len();
        let mut points = PointCloud::with_capacity(n);
        for p in &self.points {
            points.push([p[0], p[1], p[2]], p[3], true);
        }
        for &i in &self.invalid {
            if i >= n {
                return Err(parse_err(line, format!("invalid row {i} out of range {n}")));
            }
            points.valid[i] = false;
        }
        let gt = self
            .gt
            .into_iter()
            .map(|g| {
                let bbox = Box3D::from_array(g.bbox).map_err(|e| parse_err(line, e.to_string()))?;
                // keep the stored heading bit-exact
                let bbox = Box3D {
                    theta: g.bbox[6],
                    ..bbox
                };
                Ok(GtObject {
                    id: g.id,
                    label: g.label,
                    bbox,
                })
            })
            .collect::<Result<_, DatasetError>>()?;
        Ok(FrameSample {
            frame_index: self.frame,
            points,
            gt,
        })
    }
}

pub fn write_dataset_to<W: Write>(mut w: W, ds: &Dataset) -> Result<(), DatasetError> {
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        num_frames: ds.frames.len(),
        config: ds.config.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for f in &ds.frames {
        serde_json::to_writer(&mut w, &FrameRecord::from(f)).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DatasetError> {
    let f = BufWriter::new(File::create(path)?);
    write_dataset_to(f, ds)
}

/// Parses a whole dataset; any malformed or missing line fails the read.
pub fn read_dataset_from<R: Read>(r: R) -> Result<Dataset, DatasetError> {
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header"))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format != FORMAT_NAME {
        return Err(parse_err(1, format!("unknown format {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported version {}", header.version),
        ));
    }
    let mut frames = Vec::with_capacity(header.num_frames);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        frames.push(rec.into_frame(lineno)?);
    }
    if frames.len() != header.num_frames {
        return Err(parse_err(
            frames.len() + 2,
            format!(
                "expected {} frames, found {}",
                header.num_frames,
                frames.len()
            ),
        ));
    }
    Ok(Dataset {
        config: header.config,
        frames,
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    read_dataset_from(File::open(path)?)
}
