//! Dataset layout on disk:
//!
//! ```text
//! <root>/<case_id>/image.png | image.nii.gz
//! <root>/<case_id>/annotation_<k>.png | .nii.gz    (k = 0, 1, ... per annotator)
//! <root>/<case_id>/annotation_labels.png | .nii.gz (multi-class layout)
//! <root>/<case_id>/reference.png                   (optional ground truth)
//! <root>/<case_id>/meta                            (optional, `spacing = <row> <col>`)
//! ```
//!
//! 8-bit images are scaled by 1/255 and 16-bit ones by 1/65535. Label maps
//! store the class id directly as the pixel value.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};
use ndarray::{Array2, Array3, Axis, Ix2};
use nifti::{IntoNdArray, NiftiObject, ReaderOptions};

use super::SegmentationCase;
use crate::metrics::{LabelMap, Spacing};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `annotation_<k>` per annotator.
    MultiAnnotator,
    /// A single `annotation_labels` map.
    MultiClass,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_annotator" | "multi-annotator" => Ok(Layout::MultiAnnotator),
            "multi_class" | "multi-class" => Ok(Layout::MultiClass),
            other => Err(Error::invalid(format!("unknown layout {other}"))),
        }
    }
}

/// Iterator over cases in sorted case-id order.
#[derive(Debug)]
pub struct CaseStream {
    dirs: std::vec::IntoIter<PathBuf>,
    layout: Layout,
}

impl Iterator for CaseStream {
    type Item = Result<SegmentationCase>;

    fn next(&mut self) -> Option<Self::Item> {
        let dir = self.dirs.next()?;
        Some(load_case(&dir, self.layout))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.dirs.size_hint()
    }
}

/// Lists case directories under `root`. An empty root yields no cases.
pub fn load_cases(root: impl AsRef<Path>, layout: Layout) -> Result<CaseStream> {
    let root = root.as_ref();
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(CaseStream {
        dirs: dirs.into_iter(),
        layout,
    })
}

fn find(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["png", "nii.gz", "nii"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn expected(dir: &Path, stem: &str) -> Vec<PathBuf> {
    vec![dir.join(format!("{stem}.png")), dir.join(format!("{stem}.nii.gz"))]
}

/// Loads one case directory; the directory name is the case id.
pub fn load_case(dir: impl AsRef<Path>, layout: Layout) -> Result<SegmentationCase> {
    let dir = dir.as_ref();
    let case_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let image_path = find(dir, "image").ok_or_else(|| Error::MissingFiles(expected(dir, "image")))?;
    let image = read_image(&image_path)?;

    let annotations = match layout {
        Layout::MultiClass => {
            let p = find(dir, "annotation_labels")
                .ok_or_else(|| Error::MissingFiles(expected(dir, "annotation_labels")))?;
            vec![read_labels(&p)?]
        }
        Layout::MultiAnnotator => {
            let mut v = Vec::new();
            while let Some(p) = find(dir, &format!("annotation_{}", v.len())) {
                v.push(read_labels(&p)?);
            }
            if v.is_empty() {
                return Err(Error::MissingFiles(expected(dir, "annotation_0")));
            }
            v
        }
    };
    let reference = find(dir, "reference").map(|p| read_labels(&p)).transpose()?;
    let spacing = read_meta(&dir.join("meta"))?;

    let case = SegmentationCase {
        case_id,
        image,
        annotations,
        reference,
        spacing,
    };
    case.validate()?;
    Ok(case)
}

fn is_nifti(path: &Path) -> bool {
    let s = path.to_string_lossy();
    s.ends_with(".nii") || s.ends_with(".nii.gz")
}

/// Reads a 2-D NIfTI volume (a trailing singleton axis is allowed) as
/// `[rows, cols]`, with NIfTI's first axis taken as columns.
fn read_nifti(path: &Path) -> Result<Array2<f32>> {
    let nifti_err = |e: nifti::NiftiError| Error::invalid(format!("{}: {e}", path.display()));
    let obj = ReaderOptions::new().read_file(path).map_err(nifti_err)?;
    let mut arr = obj.into_volume().into_ndarray::<f32>().map_err(nifti_err)?;
    while arr.ndim() > 2 && arr.shape()[arr.ndim() - 1] == 1 {
        let last = Axis(arr.ndim() - 1);
        arr = arr.index_axis_move(last, 0);
    }
    let arr = arr
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::invalid(format!("{}: expected a 2-D slice", path.display())))?;
    Ok(arr.reversed_axes().as_standard_layout().into_owned())
}

/// Reads a PNG or NIfTI image as `[channels, height, width]` in `[0, 1]` (PNG)
/// or raw intensities (NIfTI).
pub fn read_image(path: impl AsRef<Path>) -> Result<Array3<f32>> {
    let path = path.as_ref();
    if is_nifti(path) {
        return Ok(read_nifti(path)?.insert_axis(Axis(0)));
    }
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(match img {
        DynamicImage::ImageLuma16(buf) => {
            Array3::from_shape_fn((1, h, w), |(_, r, c)| buf.get_pixel(c as u32, r as u32)[0] as f32 / 65535.0)
        }
        DynamicImage::ImageLuma8(buf) => {
            Array3::from_shape_fn((1, h, w), |(_, r, c)| buf.get_pixel(c as u32, r as u32)[0] as f32 / 255.0)
        }
        other => {
            let rgb = other.to_rgb8();
            Array3::from_shape_fn((3, h, w), |(ch, r, c)| rgb.get_pixel(c as u32, r as u32)[ch] as f32 / 255.0)
        }
    })
}

fn read_labels(path: &Path) -> Result<LabelMap> {
    if is_nifti(path) {
        let arr = read_nifti(path)?;
        if arr.iter().any(|&v| !(0.0..=255.0).contains(&v) || v.fract() != 0.0) {
            return Err(Error::invalid(format!("{}: labels must be integers in 0..=255", path.display())));
        }
        return Ok(arr.mapv(|v| v as u8));
    }
    let img = image::open(path)?;
    let buf = match img {
        DynamicImage::ImageLuma8(b) => b,
        _ => {
            return Err(Error::invalid(format!(
                "{}: label maps must be 8-bit grayscale",
                path.display()
            )))
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    Ok(Array2::from_shape_fn((h, w), |(r, c)| buf.get_pixel(c as u32, r as u32)[0]))
}

fn read_meta(path: &Path) -> Result<Option<Spacing>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        if key.trim() == "spacing" {
            let nums: Vec<f64> = value
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
            return match nums.as_slice() {
                [row, col] => Ok(Some(Spacing { row: *row, col: *col })),
                [s] => Ok(Some(Spacing { row: *s, col: *s })),
                _ => Err(Error::invalid(format!("{}: spacing needs 1 or 2 values", path.display()))),
            };
        }
    }
    Ok(None)
}

fn write_labels(map: &LabelMap, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |c, r| Luma([map[[r as usize, c as usize]]]));
    img.save(path)?;
    Ok(())
}

/// Writes a case in the dataset layout. Single-channel images are stored
/// as 16-bit PNGs; values are clamped to `[0, 1]` and quantised.
pub fn write_case(root: impl AsRef<Path>, case: &SegmentationCase, layout: Layout) -> Result<PathBuf> {
    let dir = root.as_ref().join(&case.case_id);
    std::fs::create_dir_all(&dir)?;
    let (ch, h, w) = case.image.dim();
    let q16 = |v: f32| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    match ch {
        1 => {
            let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_fn(w as u32, h as u32, |c, r| Luma([q16(case.image[[0, r as usize, c as usize]])]));
            img.save(dir.join("image.png"))?;
        }
        3 => {
            let img = image::RgbImage::from_fn(w as u32, h as u32, |c, r| {
                let px = |k: usize| (case.image[[k, r as usize, c as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
                image::Rgb([px(0), px(1), px(2)])
            });
            img.save(dir.join("image.png"))?;
        }
        n => return Err(Error::invalid(format!("cannot write a {n}-channel image as PNG"))),
    }
    match layout {
        Layout::MultiClass => {
            let a = case
                .annotations
                .first()
                .ok_or_else(|| Error::invalid("multi-class case needs one label map"))?;
            write_labels(a, &dir.join("annotation_labels.png"))?;
        }
        Layout::MultiAnnotator => {
            for (k, a) in case.annotations.iter().enumerate() {
                write_labels(a, &dir.join(format!("annotation_{k}.png")))?;
            }
        }
    }
    if let Some(r) = &case.reference {
        write_labels(r, &dir.join("reference.png"))?;
    }
    if let Some(sp) = case.spacing {
        std::fs::write(dir.join("meta"), format!("spacing = {} {}\n", sp.row, sp.col))?;
    }
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_case(id: &str, annotators: usize) -> SegmentationCase {
        let image = Array3::from_shape_fn((1, 4, 5), |(_, r, c)| (r * 5 + c) as f32 / 65535.0 * 1000.0);
        let ann = Array2::from_shape_fn((4, 5), |(r, c)| ((r + c) % 2) as u8);
        SegmentationCase {
            case_id: id.to_string(),
            image: image.mapv(|v| (v * 65535.0).round() / 65535.0),
            annotations: vec![ann; annotators],
            reference: None,
            spacing: Some(Spacing { row: 0.5, col: 0.75 }),
        }
    }

    #[test]
    fn empty_root_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_cases(dir.path(), Layout::MultiAnnotator).unwrap().count(), 0);
    }

    #[test]
    fn four_annotators_load() {
        let dir = tempfile::tempdir().unwrap();
        let case = small_case("c1", 4);
        write_case(dir.path(), &case, Layout::MultiAnnotator).unwrap();
        let loaded: Vec<_> = load_cases(dir.path(), Layout::MultiAnnotator)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].annotations.len(), 4);
        assert_eq!(loaded[0].spacing, case.spacing);
    }

    #[test]
    fn multi_class_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut case = small_case("mc", 1);
        case.annotations[0][[0, 0]] = 7;
        write_case(dir.path(), &case, Layout::MultiClass).unwrap();
        let loaded = load_cases(dir.path(), Layout::MultiClass).unwrap().next().unwrap().unwrap();
        assert_eq!(loaded.annotations, case.annotations);
        assert_eq!(loaded.label_bound(), 8);
    }

    #[test]
    fn missing_files_listed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("c0")).unwrap();
        let err = load_cases(dir.path(), Layout::MultiAnnotator).unwrap().next().unwrap().unwrap_err();
        match err {
            Error::MissingFiles(paths) => assert!(paths[0].ends_with("image.png")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn shape_mismatch_rejected_with_case_id() {
        let dir = tempfile::tempdir().unwrap();
        let case = small_case("bad", 1);
        write_case(dir.path(), &case, Layout::MultiAnnotator).unwrap();
        write_labels(&LabelMap::zeros((3, 3)), &dir.path().join("bad/annotation_0.png")).unwrap();
        let err = load_cases(dir.path(), Layout::MultiAnnotator).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, Error::Case { ref case_id, .. } if case_id == "bad"), "{err}");
    }

    #[test]
    fn nifti_slices_load() {
        let dir = tempfile::tempdir().unwrap();
        let case_dir = dir.path().join("n0");
        std::fs::create_dir(&case_dir).unwrap();
        // NIfTI's first axis is x (columns)
        let img = Array2::from_shape_fn((5, 4), |(x, y)| (y * 5 + x) as f32);
        nifti::writer::WriterOptions::new(case_dir.join("image.nii.gz"))
            .write_nifti(&img)
            .unwrap();
        let lab = Array2::from_shape_fn((5, 4), |(x, _)| (x % 2) as u8);
        nifti::writer::WriterOptions::new(case_dir.join("annotation_0.nii.gz"))
            .write_nifti(&lab)
            .unwrap();
        let case = load_cases(dir.path(), Layout::MultiAnnotator).unwrap().next().unwrap().unwrap();
        assert_eq!(case.image.dim(), (1, 4, 5));
        assert_eq!(case.image[[0, 2, 3]], 13.0);
        assert_eq!(case.annotations[0][[0, 1]], 1);
    }
}
