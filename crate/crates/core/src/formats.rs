//! On-disk inputs: D32F depth rasters, intrinsics JSON, PNG and RLE masks,
//! and the JSON-lines frame manifest.

use crate::camera::{CameraIntrinsics, DepthMap};
use crate::error::{Error, Result};
use crate::morphology::{BinaryMask, InstanceObservation};
use crate::pipeline::{FrameInput, SceneKind};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

const DEPTH_MAGIC: &[u8; 4] = b"D32F";

pub fn encode_depth(depth: &DepthMap<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * depth.values().len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&depth.width().to_le_bytes());
    out.extend_from_slice(&depth.height().to_le_bytes());
    for (i, d) in depth.values().iter().enumerate() {
        let (u, v) = (i as u32 % depth.width(), i as u32 / depth.width());
        let value = if depth.is_valid(u, v) { *d as f32 } else { 0.0 };
        out.extend_from_slice(&value.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<DepthMap<f64>> {
    let bad = |d: String| Error::format("depth raster", path, d);
    if bytes.len() < 12 || &bytes[..4] != DEPTH_MAGIC {
        return Err(bad("missing D32F header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (w, h) = (word(4), word(8));
    let n = w as usize * h as usize;
    if bytes.len() != 12 + 4 * n {
        return Err(bad(format!(
            "{w}x{h} needs {} bytes, file has {}",
            12 + 4 * n,
            bytes.len()
        )));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    DepthMap::from_values(w, h, values).map_err(|e| bad(e.to_string()))
}

pub fn read_depth(path: &Path) -> Result<DepthMap<f64>> {
    decode_depth(&fs::read(path).map_err(|e| Error::io(path, e))?, path)
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let intr: CameraIntrinsics<f64> =
        serde_json::from_str(&text).map_err(|e| Error::format("intrinsics", path, e))?;
    intr.validate()
        .map_err(|e| Error::format("intrinsics", path, e))?;
    Ok(intr)
}

pub fn intrinsics_json(intr: &CameraIntrinsics<f64>) -> String {
    serde_json::to_string_pretty(intr).expect("intrinsics serialize") + "\n"
}

/// 8-bit grayscale PNG, 0 background and 255 foreground.
pub fn encode_mask_png(mask: &BinaryMask) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, mask.width(), mask.height());
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("png header");
        let data: Vec<u8> = mask
            .as_slice()
            .iter()
            .map(|b| if *b { 255 } else { 0 })
            .collect();
        writer.write_image_data(&data).expect("png data");
    }
    out
}

/// Decodes an 8-bit grayscale PNG mask; any nonzero pixel is foreground.
pub fn decode_mask_png(bytes: &[u8], path: &Path) -> Result<BinaryMask> {
    let bad = |d: String| Error::format("mask png", path, d);
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| bad("image too large".into()))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(e.to_string()))?;
    let channels = info.color_type.samples();
    if !matches!(
        info.color_type,
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha
    ) {
        return Err(bad(format!(
            "expected grayscale, found {:?}",
            info.color_type
        )));
    }
    let (w, h) = (info.width, info.height);
    let stride = info.line_size;
    let mut data = Vec::with_capacity(w as usize * h as usize);
    for row in buf[..stride * h as usize].chunks_exact(stride) {
        data.extend(
            row.chunks_exact(channels)
                .take(w as usize)
                .map(|px| px[0] != 0),
        );
    }
    BinaryMask::from_vec(w, h, data)
}

/// One line per row, space-separated `start:length` runs.
pub fn encode_mask_rle(mask: &BinaryMask) -> String {
    let mut out = String::new();
    for v in 0..mask.height() {
        let mut runs = Vec::new();
        let mut u = 0;
        while u < mask.width() {
            if mask.get(u, v) {
                let start = u;
                while u < mask.width() && mask.get(u, v) {
                    u += 1;
                }
                runs.push(format!("{start}:{}", u - start));
            } else {
                u += 1;
            }
        }
        out.push_str(&runs.join(" "));
        out.push('\n');
    }
    out
}

pub fn decode_mask_rle(text: &str, width: u32, height: u32, path: &Path) -> Result<BinaryMask> {
    let bad = |d: String| Error::format("mask rle", path, d);
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != height as usize {
        return Err(bad(format!("{} rows, expected {height}", lines.len())));
    }
    let mut mask = BinaryMask::new(width, height);
    for (v, line) in lines.iter().enumerate() {
        for run in line.split_whitespace() {
            let (s, l) = run
                .split_once(':')
                .ok_or_else(|| bad(format!("row {v}: bad run `{run}`")))?;
            let parse = |x: &str| x.parse::<u32>().map_err(|e| bad(format!("row {v}: {e}")));
            let (start, len) = (parse(s)?, parse(l)?);
            if start.checked_add(len).is_none_or(|end| end > width) {
                return Err(bad(format!("row {v}: run `{run}` exceeds width {width}")));
            }
            for u in start..start + len {
                mask.set(u, v as u32, true);
            }
        }
    }
    Ok(mask)
}

/// Reads a mask by extension: `.png`, otherwise RLE text.
pub fn read_mask(path: &Path, width: u32, height: u32) -> Result<BinaryMask> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let mask = if is_png {
        decode_mask_png(&fs::read(path).map_err(|e| Error::io(path, e))?, path)?
    } else {
        decode_mask_rle(
            &fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            width,
            height,
            path,
        )?
    };
    if mask.width() != width || mask.height() != height {
        return Err(Error::format(
            "mask",
            path,
            format!(
                "{}x{} does not match the {width}x{height} image",
                mask.width(),
                mask.height()
            ),
        ));
    }
    Ok(mask)
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Frame name used for output files; defaults to the depth file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub depth: PathBuf,
    pub intrinsics: PathBuf,
    pub masks: Vec<PathBuf>,
    pub classes: Vec<String>,
    /// Detector confidences, one per mask; 1.0 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_mask: Option<PathBuf>,
    pub scene: SceneKind,
}

impl ManifestEntry {
    pub fn frame_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.depth
                .file_stem()
                .map_or_else(|| "frame".into(), |s| s.to_string_lossy().into_owned())
        })
    }

    /// Loads every raster this entry names.
    pub fn load(&self, base: &Path) -> Result<FrameInput> {
        let at = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        if self.masks.len() != self.classes.len() {
            return Err(Error::InvalidInput(format!(
                "{} masks but {} classes",
                self.masks.len(),
                self.classes.len()
            )));
        }
        if let Some(s) = &self.scores {
            if s.len() != self.masks.len() {
                return Err(Error::InvalidInput(format!(
                    "{} masks but {} scores",
                    self.masks.len(),
                    s.len()
                )));
            }
        }
        let intrinsics = read_intrinsics(&at(&self.intrinsics))?;
        let depth = read_depth(&at(&self.depth))?;
        if !depth.matches(&intrinsics) {
            return Err(Error::InvalidInput(format!(
                "depth {}x{} does not match intrinsics {}x{}",
                depth.width(),
                depth.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        let (w, h) = (intrinsics.width, intrinsics.height);
        let mut observations = Vec::with_capacity(self.masks.len());
        for (i, (m, class)) in self.masks.iter().zip(&self.classes).enumerate() {
            let path = at(m);
            let mask = read_mask(&path, w, h)?;
            let score = self.scores.as_ref().map_or(1.0, |s| s[i]);
            observations.push(
                InstanceObservation::new(class.clone(), mask, score)
                    .map_err(|e| Error::format("mask", &path, e))?,
            );
        }
        let ground_observation = match &self.ground_mask {
            Some(g) => {
                let path = at(g);
                let mask = read_mask(&path, w, h)?;
                if mask.is_empty() {
                    None
                } else {
                    Some(InstanceObservation::new("ground", mask, 1.0)?)
                }
            }
            None => None,
        };
        Ok(FrameInput {
            intrinsics,
            depth,
            observations,
            ground_observation,
            scene_kind: self.scene,
        })
    }
}

/// Parses a JSON-lines manifest; blank lines are skipped.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format("manifest line", path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(
        &fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        path,
    )
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("manifest serialize") + "\n")
        .collect()
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
