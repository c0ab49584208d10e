//! WIDER FACE annotation and detection-submission text formats.
//!
//! Annotations: for every image a relative path line, a face count line, then
//! one `x y w h blur expression illumination invalid occlusion pose` line per
//! face. Images without faces carry a single all-zero dummy row.
//!
//! Detections: the same path line and count line, then `x y w h score` per
//! detection with integer coordinates and a three-decimal score.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::postprocess::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FaceAttributes {
    pub blur: u8,
    pub expression: u8,
    pub illumination: u8,
    pub invalid: u8,
    pub occlusion: u8,
    pub pose: u8,
}

impl FaceAttributes {
    /// Names and maximum documented value of each attribute, in file order.
    const RANGES: [(&'static str, u8); 6] = [
        ("blur", 2),
        ("expression", 1),
        ("illumination", 1),
        ("invalid", 1),
        ("occlusion", 2),
        ("pose", 1),
    ];

    fn as_array(&self) -> [u8; 6] {
        [self.blur, self.expression, self.illumination, self.invalid, self.occlusion, self.pose]
    }

    /// Attributes outside their documented range.
    pub fn out_of_range(&self) -> Vec<&'static str> {
        Self::RANGES
            .iter()
            .zip(self.as_array())
            .filter(|((_, max), v)| v > max)
            .map(|((name, _), _)| *name)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceAnnotation {
    pub bbox: BBox,
    pub attributes: FaceAttributes,
}

impl FaceAnnotation {
    pub fn is_invalid(&self) -> bool {
        self.attributes.invalid != 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub relative_path: String,
    pub faces: Vec<FaceAnnotation>,
}

impl ImageRecord {
    /// Boxes of the faces not flagged invalid.
    pub fn valid_boxes(&self) -> Vec<BBox> {
        self.faces.iter().filter(|f| !f.is_invalid()).map(|f| f.bbox).collect()
    }
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
    peeked: Option<String>,
}

impl<R: BufRead> Lines<R> {
    fn new(r: R) -> Self {
        Self { inner: r.lines(), line_no: 0, peeked: None }
    }

    /// Next non-blank line, trimmed, with its 1-based number.
    fn next(&mut self) -> Result<Option<(usize, String)>> {
        if let Some(l) = self.peeked.take() {
            return Ok(Some((self.line_no, l)));
        }
        for line in self.inner.by_ref() {
            self.line_no += 1;
            let t = line?.trim().to_string();
            if !t.is_empty() {
                return Ok(Some((self.line_no, t)));
            }
        }
        Ok(None)
    }

    fn peek(&mut self) -> Result<Option<&str>> {
        if self.peeked.is_none() {
            match self.next()? {
                Some((_, l)) => self.peeked = Some(l),
                None => return Ok(None),
            }
        }
        Ok(self.peeked.as_deref())
    }

    fn expect(&mut self, what: &str) -> Result<(usize, String)> {
        self.next()?.ok_or_else(|| Error::parse(self.line_no + 1, format!("unexpected end of input, expected {what}")))
    }
}

fn parse_count(line_no: usize, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::parse(line_no, format!("malformed count {s:?}")))
}

fn parse_numbers(line_no: usize, s: &str, want: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = s.split_whitespace().collect();
    if fields.len() != want {
        return Err(Error::parse(line_no, format!("expected {want} fields, found {}", fields.len())));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line_no, format!("non-numeric field {f:?}")))
        })
        .collect()
}

fn looks_like_dummy(s: &str) -> bool {
    let fields: Vec<&str> = s.split_whitespace().collect();
    fields.len() == 10 && fields.iter().all(|f| f.parse::<f64>().is_ok())
}

fn parse_face(line_no: usize, s: &str) -> Result<FaceAnnotation> {
    let v = parse_numbers(line_no, s, 10)?;
    let (x, y, w, h) = (v[0], v[1], v[2], v[3]);
    if w < 0.0 || h < 0.0 {
        return Err(Error::parse(line_no, format!("negative box size {w}x{h}")));
    }
    let mut attrs = [0u8; 6];
    for (k, a) in attrs.iter_mut().enumerate() {
        let raw = v[4 + k];
        if raw.fract() != 0.0 || !(0.0..=255.0).contains(&raw) {
            return Err(Error::parse(line_no, format!("attribute {raw} is not a small integer")));
        }
        *a = raw as u8;
    }
    let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| Error::parse(line_no, e.to_string()))?;
    Ok(FaceAnnotation {
        bbox,
        attributes: FaceAttributes {
            blur: attrs[0],
            expression: attrs[1],
            illumination: attrs[2],
            invalid: attrs[3],
            occlusion: attrs[4],
            pose: attrs[5],
        },
    })
}

pub fn parse_annotations(reader: impl BufRead) -> Result<Vec<ImageRecord>> {
    let mut lines = Lines::new(reader);
    let mut records = Vec::new();
    while let Some((_, path)) = lines.next()? {
        let (count_line, count) = lines.expect("face count")?;
        let n = parse_count(count_line, &count)?;
        let mut faces = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines.expect("face line")?;
            faces.push(parse_face(ln, &l)?);
        }
        if n == 0 && lines.peek()?.is_some_and(looks_like_dummy) {
            lines.next()?;
        }
        records.push(ImageRecord { relative_path: path, faces });
    }
    Ok(records)
}

pub fn parse_annotations_str(text: &str) -> Result<Vec<ImageRecord>> {
    parse_annotations(text.as_bytes())
}

pub fn read_annotations_file(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let f = std::fs::File::open(path)?;
    parse_annotations(std::io::BufReader::new(f))
}

/// Writes records in the official layout, including the dummy row for
/// face-less images. Coordinates use the shortest exact decimal form.
pub fn write_annotations(records: &[ImageRecord], mut w: impl Write) -> Result<()> {
    for r in records {
        writeln!(w, "{}", r.relative_path)?;
        writeln!(w, "{}", r.faces.len())?;
        if r.faces.is_empty() {
            writeln!(w, "0 0 0 0 0 0 0 0 0 0")?;
        }
        for f in &r.faces {
            let a = f.attributes;
            writeln!(
                w,
                "{} {} {} {} {} {} {} {} {} {}",
                f.bbox.x_min,
                f.bbox.y_min,
                f.bbox.width(),
                f.bbox.height(),
                a.blur,
                a.expression,
                a.illumination,
                a.invalid,
                a.occlusion,
                a.pose
            )?;
        }
    }
    Ok(())
}

/// Counts and anomalies found in an annotation set.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AnnotationReport {
    pub images: usize,
    pub faces: usize,
    pub invalid_faces: usize,
    pub empty_images: usize,
    pub zero_size_faces: usize,
    pub anomalies: Vec<String>,
}

pub fn validate_annotations(records: &[ImageRecord]) -> AnnotationReport {
    let mut rep = AnnotationReport { images: records.len(), ..Default::default() };
    for r in records {
        if r.faces.is_empty() {
            rep.empty_images += 1;
        }
        for (k, f) in r.faces.iter().enumerate() {
            rep.faces += 1;
            if f.is_invalid() {
                rep.invalid_faces += 1;
            }
            if f.bbox.area() <= 0.0 {
                rep.zero_size_faces += 1;
                rep.anomalies.push(format!("{} face {}: zero-size box", r.relative_path, k));
            }
            for name in f.attributes.out_of_range() {
                rep.anomalies.push(format!("{} face {}: {} out of range", r.relative_path, k, name));
            }
        }
    }
    rep
}

impl std::fmt::Display for AnnotationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "images: {}", self.images)?;
        writeln!(f, "faces: {}", self.faces)?;
        writeln!(f, "invalid faces: {}", self.invalid_faces)?;
        writeln!(f, "images without faces: {}", self.empty_images)?;
        writeln!(f, "zero-size faces: {}", self.zero_size_faces)?;
        writeln!(f, "anomalies: {}", self.anomalies.len())?;
        for a in &self.anomalies {
            writeln!(f, "  {a}")?;
        }
        Ok(())
    }
}

/// Integer submission fields of a box, rounded half away from zero.
pub fn quantize_box(b: &BBox) -> [i64; 4] {
    [
        b.x_min.round() as i64,
        b.y_min.round() as i64,
        b.width().round() as i64,
        b.height().round() as i64,
    ]
}

/// One submission block as text.
pub fn format_detections(path: &str, dets: &[Detection]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{path}");
    let _ = writeln!(s, "{}", dets.len());
    for d in dets {
        let [x, y, w, h] = quantize_box(&d.bbox);
        let _ = writeln!(s, "{x} {y} {w} {h} {:.3}", d.score);
    }
    s
}

pub fn write_detections(path: &str, dets: &[Detection], mut w: impl Write) -> Result<()> {
    if let Some(d) = dets.iter().find(|d| !d.score.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite detection score {}", d.score)));
    }
    w.write_all(format_detections(path, dets).as_bytes())?;
    Ok(())
}

/// Parses one or more concatenated submission blocks.
pub fn read_detections(reader: impl BufRead) -> Result<Vec<(String, Vec<Detection>)>> {
    let mut lines = Lines::new(reader);
    let mut out = Vec::new();
    while let Some((_, path)) = lines.next()? {
        let (cl, count) = lines.expect("detection count")?;
        let n = parse_count(cl, &count)?;
        let mut dets = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines.expect("detection line")?;
            let v = parse_numbers(ln, &l, 5)?;
            if v[2] < 0.0 || v[3] < 0.0 {
                return Err(Error::parse(ln, format!("negative box size {}x{}", v[2], v[3])));
            }
            let bbox = BBox::from_xywh(v[0], v[1], v[2], v[3]).map_err(|e| Error::parse(ln, e.to_string()))?;
            dets.push(Detection { bbox, score: v[4] });
        }
        out.push((path, dets));
    }
    Ok(out)
}

/// Submission file location for an image: the relative path with its
/// extension replaced by `.txt`.
pub fn detection_file_path(dir: &Path, relative_path: &str) -> PathBuf {
    dir.join(relative_path).with_extension("txt")
}

/// Writes one submission file per image under `dir`.
pub fn write_detection_dir(dir: &Path, results: &[(String, Vec<Detection>)]) -> Result<()> {
    for (path, dets) in results {
        let file = detection_file_path(dir, path);
        if let Some(parent) = file.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut buf = Vec::new();
        write_detections(path, dets, &mut buf)?;
        std::fs::write(&file, buf)?;
    }
    Ok(())
}

/// Reads every `.txt` submission file under `dir`, sorted by file path.
pub fn read_detection_dir(dir: &Path) -> Result<Vec<(String, Vec<Detection>)>> {
    let mut files: Vec<PathBuf> = WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "txt"))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let reader = std::io::BufReader::new(std::fs::File::open(&f)?);
        let blocks = read_detections(reader).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", f.display()) },
            other => other,
        })?;
        out.extend(blocks);
    }
    Ok(out)
}

/// Per-image lists of ground-truth indices that count for a difficulty
/// subset. Same block layout as annotations: path, count, then one 1-based
/// face index per line.
pub fn parse_keep_list(reader: impl BufRead) -> Result<Vec<(String, Vec<usize>)>> {
    let mut lines = Lines::new(reader);
    let mut out = Vec::new();
    while let Some((_, path)) = lines.next()? {
        let (cl, count) = lines.expect("index count")?;
        let n = parse_count(cl, &count)?;
        let mut idx = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines.expect("face index")?;
            let k = parse_count(ln, &l)?;
            if k == 0 {
                return Err(Error::parse(ln, "face indices are 1-based"));
            }
            idx.push(k - 1);
        }
        out.push((path, idx));
    }
    Ok(out)
}
