//! Annotation files.
//!
//! # Native format
//!
//! UTF-8 text, one image per line:
//!
//! ```text
//! # config 3f2a...
//! images/0000.pgm 10,22,15,120,bline 40,22,46,120,bline
//! images/0001.pgm
//! images/0002.pgm 71,22,77.5,120,bline,0.9731
//! ```
//!
//! The first whitespace-separated field is the image path (which therefore
//! must not contain whitespace). Each further field is one box
//! `x1,y1,x2,y2,bline` with an optional trailing score for detections.
//! Coordinates are written as integers when integral and otherwise in
//! shortest round-trip decimal form. Lines starting with `#` and blank lines
//! are ignored by the reader.
//!
//! # COCO-style export
//!
//! JSON object with `images` (`id`, `file_name`, `width`, `height`),
//! `categories` (a single `{"id": 1, "name": "bline"}`) and `annotations`
//! (`id`, `image_id`, `category_id`, `bbox` as `[x, y, width, height]`,
//! `area`, and `score` for detections). Image ids start at 1 in record order.

use serde::{Deserialize, Serialize};

use crate::detect::BBox;
use crate::phantom::PhantomError;

pub const LABEL: &str = "bline";

/// One box of a record; `score` is present for detections only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annotated {
    pub bbox: BBox<f64>,
    pub score: Option<f64>,
}

impl Annotated {
    pub fn truth(bbox: BBox<f64>) -> Self {
        Self { bbox, score: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub path: String,
    pub boxes: Vec<Annotated>,
}

fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn check_box(b: &BBox<f64>, bounds: Option<(usize, usize)>, line: usize) -> Result<(), PhantomError> {
    b.validate().map_err(|e| PhantomError::Annotation { line, message: e.to_string() })?;
    if let Some((w, h)) = bounds {
        if !b.within(w as f64, h as f64) {
            return Err(PhantomError::Annotation {
                line,
                message: format!("box {:?} outside {w}x{h}", b.corners()),
            });
        }
    }
    Ok(())
}

/// Serializes records in the native format, preceded by `header` lines
/// written as comments.
pub fn write_annotations(records: &[Record], header: &[String]) -> Result<String, PhantomError> {
    let mut out = String::new();
    for h in header {
        out.push_str("# ");
        out.push_str(h);
        out.push('\n');
    }
    for (i, r) in records.iter().enumerate() {
        if r.path.is_empty() || r.path.chars().any(char::is_whitespace) || r.path.starts_with('#') {
            return Err(PhantomError::Annotation {
                line: i + 1,
                message: format!("unusable image path {:?}", r.path),
            });
        }
        out.push_str(&r.path);
        for a in &r.boxes {
            check_box(&a.bbox, None, i + 1)?;
            let c = a.bbox.corners();
            out.push(' ');
            out.push_str(&format!("{},{},{},{},{LABEL}", num(c[0]), num(c[1]), num(c[2]), num(c[3])));
            if let Some(s) = a.score {
                if !(0.0..=1.0).contains(&s) {
                    return Err(PhantomError::Annotation { line: i + 1, message: format!("score {s}") });
                }
                out.push_str(&format!(",{s}"));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses the native format. With `bounds = Some((width, height))` every box
/// must lie inside the image.
pub fn read_annotations(text: &str, bounds: Option<(usize, usize)>) -> Result<Vec<Record>, PhantomError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| PhantomError::Annotation { line: lineno, message: m };
        let mut fields = line.split_whitespace();
        let path = fields.next().expect("non-empty line").to_string();
        let mut boxes = Vec::new();
        for f in fields {
            let parts: Vec<&str> = f.split(',').collect();
            if !(parts.len() == 5 || parts.len() == 6) || parts[4] != LABEL {
                return Err(bad(format!("malformed box {f:?}")));
            }
            let mut c = [0.0; 4];
            for k in 0..4 {
                c[k] = parts[k].parse::<f64>().map_err(|_| bad(format!("bad coordinate in {f:?}")))?;
            }
            let bbox = BBox::from_corners(c);
            check_box(&bbox, bounds, lineno)?;
            let score = match parts.get(5) {
                Some(s) => {
                    let s: f64 = s.parse().map_err(|_| bad(format!("bad score in {f:?}")))?;
                    if !(0.0..=1.0).contains(&s) {
                        return Err(bad(format!("score {s} outside [0, 1]")));
                    }
                    Some(s)
                }
                None => None,
            };
            boxes.push(Annotated { bbox, score });
        }
        records.push(Record { path, boxes });
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coco {
    pub images: Vec<CocoImage>,
    pub categories: Vec<CocoCategory>,
    pub annotations: Vec<CocoAnnotation>,
}

/// `[x, y, width, height]` of a corner box.
pub fn to_coco_bbox(b: &BBox<f64>) -> [f64; 4] {
    [b.x1, b.y1, b.width(), b.height()]
}

pub fn from_coco_bbox(c: [f64; 4]) -> BBox<f64> {
    BBox::raw(c[0], c[1], c[0] + c[2], c[1] + c[3])
}

/// Builds the COCO-style document; every image has size `image_size`.
pub fn to_coco(records: &[Record], image_size: (usize, usize)) -> Coco {
    let mut annotations = Vec::new();
    let images = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let image_id = i as u64 + 1;
            for a in &r.boxes {
                annotations.push(CocoAnnotation {
                    id: annotations.len() as u64 + 1,
                    image_id,
                    category_id: 1,
                    bbox: to_coco_bbox(&a.bbox),
                    area: a.bbox.area(),
                    score: a.score,
                });
            }
            CocoImage { id: image_id, file_name: r.path.clone(), width: image_size.0, height: image_size.1 }
        })
        .collect();
    Coco { images, categories: vec![CocoCategory { id: 1, name: LABEL.into() }], annotations }
}

/// Rebuilds records in image order from a COCO-style document.
pub fn from_coco(coco: &Coco) -> Result<Vec<Record>, PhantomError> {
    let bad = |m: String| PhantomError::Coco(m);
    let mut records: Vec<Record> =
        coco.images.iter().map(|i| Record { path: i.file_name.clone(), boxes: Vec::new() }).collect();
    for a in &coco.annotations {
        let slot = coco
            .images
            .iter()
            .position(|i| i.id == a.image_id)
            .ok_or_else(|| bad(format!("annotation {} refers to unknown image {}", a.id, a.image_id)))?;
        if a.category_id != 1 {
            return Err(bad(format!("annotation {} has category {}", a.id, a.category_id)));
        }
        let bbox = from_coco_bbox(a.bbox);
        bbox.validate().map_err(|e| bad(e.to_string()))?;
        let img = &coco.images[slot];
        if !bbox.within(img.width as f64, img.height as f64) {
            return Err(bad(format!("annotation {} outside its image", a.id)));
        }
        records[slot].boxes.push(Annotated { bbox, score: a.score });
    }
    Ok(records)
}

pub fn write_coco(records: &[Record], image_size: (usize, usize)) -> String {
    serde_json::to_string_pretty(&to_coco(records, image_size)).expect("plain data serializes")
}

pub fn read_coco(text: &str) -> Result<Vec<Record>, PhantomError> {
    let coco: Coco = serde_json::from_str(text).map_err(|e| PhantomError::Coco(e.to_string()))?;
    from_coco(&coco)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(path: &str, boxes: &[(f64, f64, f64, f64, Option<f64>)]) -> Record {
        Record {
            path: path.into(),
            boxes: boxes
                .iter()
                .map(|&(a, b, c, d, s)| Annotated { bbox: BBox::new(a, b, c, d).unwrap(), score: s })
                .collect(),
        }
    }

    #[test]
    fn empty_round_trip() {
        let text = write_annotations(&[], &[]).unwrap();
        assert_eq!(text, "");
        assert!(read_annotations(&text, None).unwrap().is_empty());
    }

    #[test]
    fn native_layout() {
        let r = [rec("a.pgm", &[(10.0, 20.0, 30.0, 110.0, None)]), rec("b.pgm", &[])];
        let text = write_annotations(&r, &["config abc".into()]).unwrap();
        assert_eq!(text, "# config abc\na.pgm 10,20,30,110,bline\nb.pgm\n");
        assert_eq!(read_annotations(&text, Some((154, 120))).unwrap(), r);
    }

    #[test]
    fn scores_and_fractions_round_trip() {
        let r = [rec("d.pgm", &[(1.25, 2.0, 3.1, 4.0, Some(0.123456789))])];
        let text = write_annotations(&r, &[]).unwrap();
        assert_eq!(read_annotations(&text, None).unwrap(), r);
    }

    #[test]
    fn coco_bbox_is_corner_to_width() {
        let r = [rec("a.pgm", &[(10.0, 20.0, 30.0, 110.0, None)])];
        let coco = to_coco(&r, (154, 120));
        assert_eq!(coco.annotations[0].bbox, [10.0, 20.0, 20.0, 90.0]);
        assert_eq!(coco.annotations[0].category_id, 1);
        assert_eq!(read_coco(&write_coco(&r, (154, 120))).unwrap(), r);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(read_annotations("a.pgm 1,2,3\n", None).is_err());
        assert!(read_annotations("a.pgm 1,2,3,4,cat\n", None).is_err());
        assert!(read_annotations("a.pgm 3,2,1,4,bline\n", None).is_err());
        assert!(read_annotations("a.pgm 1,2,3,4,bline,1.5\n", None).is_err());
        assert!(read_annotations("a.pgm 0,0,200,10,bline\n", Some((154, 120))).is_err());
    }
}
