use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::model::Frame;

pub const GROUNDTRUTH_FILE: &str = "groundtruth_rect.txt";
pub const IMAGE_DIR: &str = "img";

/// A sequence on disk: ordered frame files and one ground-truth box per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub truth: Vec<BoundingBox>,
}

/// A sequence held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Frame>,
    pub truth: Vec<BoundingBox>,
}

fn check_counts(name: &str, frames: usize, truth: usize) -> Result<()> {
    if frames != truth || frames < 2 {
        return Err(Error::Config(format!(
            "sequence {name}: {frames} frames and {truth} ground-truth boxes (need equal and >= 2)"
        )));
    }
    Ok(())
}

impl SequenceRecord {
    /// Reads `dir/img/*.{png,jpg,jpeg}` (sorted by name) and
    /// `dir/groundtruth_rect.txt`.
    pub fn open(dir: &Path) -> Result<SequenceRecord> {
        let gt_path = dir.join(GROUNDTRUTH_FILE);
        let truth = read_boxes(&gt_path)?;
        let img_dir = dir.join(IMAGE_DIR);
        let mut frames: Vec<PathBuf> = fs::read_dir(&img_dir)
            .map_err(|e| Error::io(&img_dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        frames.sort();
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into());
        check_counts(&name, frames.len(), truth.len())?;
        Ok(SequenceRecord {
            name,
            frames,
            truth,
        })
    }

    pub fn load(&self) -> Result<Sequence> {
        let frames = self.frames.iter().map(|p| Frame::load(p)).collect::<Result<Vec<_>>>()?;
        Ok(Sequence {
            name: self.name.clone(),
            frames,
            truth: self.truth.clone(),
        })
    }
}

impl Sequence {
    pub fn validate(&self) -> Result<()> {
        check_counts(&self.name, self.frames.len(), self.truth.len())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Writes the OTB-style layout under `dir`, frames numbered from 1.
    pub fn save(&self, dir: &Path) -> Result<SequenceRecord> {
        self.validate()?;
        let img_dir = dir.join(IMAGE_DIR);
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let mut paths = Vec::with_capacity(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let p = img_dir.join(format!("{:04}.png", i + 1));
            f.save_png(&p)?;
            paths.push(p);
        }
        write_boxes(&dir.join(GROUNDTRUTH_FILE), &self.truth)?;
        Ok(SequenceRecord {
            name: self.name.clone(),
            frames: paths,
            truth: self.truth.clone(),
        })
    }
}

/// Reads one box per non-empty line.
pub fn read_boxes(path: &Path) -> Result<Vec<BoundingBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            BoundingBox::parse_line(l).ok_or_else(|| {
                Error::format(path, format!("line {}: expected x,y,w,h with w,h > 0, got {l:?}", i + 1))
            })
        })
        .collect()
}

pub fn write_boxes(path: &Path, boxes: &[BoundingBox]) -> Result<()> {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&b.to_line());
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_and_open_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let truth = vec![
            BoundingBox::new(1.0, 2.0, 3.0, 4.0).unwrap(),
            BoundingBox::new(1.5, 2.0, 3.0, 4.25).unwrap(),
        ];
        let frames = vec![Frame::filled(8, 6, 3, 9.0).unwrap(), Frame::filled(8, 6, 3, 200.0).unwrap()];
        let seq = Sequence {
            name: "s".into(),
            frames,
            truth,
        };
        seq.save(dir.path()).unwrap();
        let rec = SequenceRecord::open(dir.path()).unwrap();
        let back = rec.load().unwrap();
        assert_eq!(back.frames, seq.frames);
        assert_eq!(back.truth, seq.truth);
        assert!(rec.frames[0].ends_with("img/0001.png"));
    }

    #[test]
    fn missing_groundtruth_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = SequenceRecord::open(dir.path()).unwrap_err().to_string();
        assert!(err.contains(GROUNDTRUTH_FILE), "{err}");
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.txt");
        fs::write(&p, "1,1,2,2\n1,1,0,2\n").unwrap();
        let err = read_boxes(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
