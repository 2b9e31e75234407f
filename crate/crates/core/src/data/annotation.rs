use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["x", "y", "l1", "l2"];

/// One annotated pixel: column `x`, row `y`, inter-object rank `l1` and
/// intra-object rank `l2`. Lower ranks are closer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AnnotationEntry {
    pub x: u32,
    pub y: u32,
    pub l1: u32,
    pub l2: u32,
}

impl AnnotationEntry {
    pub fn rank(&self) -> (u32, u32) {
        (self.l1, self.l2)
    }

    /// Lexicographic depth order on `(l1, l2)`; `Less` means closer.
    pub fn depth_cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }
}

/// Sparse depth-ordering labels for one image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OrderingAnnotation {
    pub image_id: String,
    pub entries: Vec<AnnotationEntry>,
}

/// Parses `x,y,l1,l2` CSV text into a validated annotation.
pub fn parse_annotations(text: &str) -> Result<OrderingAnnotation> {
    OrderingAnnotation::parse(text, "")
}

impl OrderingAnnotation {
    pub fn parse(text: &str, image_id: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.iter().map(str::trim).ne(HEADER) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `x,y,l1,l2`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut entries = Vec::new();
        let mut seen: HashMap<(u32, u32), u64> = HashMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != 4 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 4 fields, got {}", record.len()),
                });
            }
            let mut fields = [0i64; 4];
            for (slot, (raw, name)) in fields.iter_mut().zip(record.iter().zip(HEADER)) {
                *slot = raw.trim().parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("field `{name}` is not an integer: `{raw}`"),
                })?;
            }
            let [x, y, l1, l2] = fields;
            if x < 0 || y < 0 || x > u32::MAX as i64 || y > u32::MAX as i64 {
                return Err(Error::Parse {
                    line,
                    msg: format!("coordinate ({x}, {y}) is not a pixel index"),
                });
            }
            if l1 < 1 || l2 < 1 || l1 > u32::MAX as i64 || l2 > u32::MAX as i64 {
                return Err(Error::InvalidLabel { line, l1, l2 });
            }
            let (x, y) = (x as u32, y as u32);
            if seen.insert((x, y), line).is_some() {
                return Err(Error::DuplicateCoordinate { line, x, y });
            }
            entries.push(AnnotationEntry {
                x,
                y,
                l1: l1 as u32,
                l2: l2 as u32,
            });
        }
        Ok(Self {
            image_id: image_id.to_string(),
            entries,
        })
    }

    /// Reads a CSV annotation file; the image id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&text, &id)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::from("x,y,l1,l2\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.x, e.y, e.l1, e.l2));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    /// Checks every entry lies inside a `width` x `height` image.
    pub fn validate_bounds(&self, width: usize, height: usize) -> Result<()> {
        match self
            .entries
            .iter()
            .find(|e| e.x as usize >= width || e.y as usize >= height)
        {
            Some(e) => Err(Error::OutOfBounds {
                x: e.x,
                y: e.y,
                width,
                height,
            }),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
