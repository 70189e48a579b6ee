//! Dataset manifest, paired-file generation, and patch sampling.
//!
//! A manifest is line-oriented text, one pair per line:
//! `lr_path<TAB>hr_path<TAB>scene_seed`. Paths are stored relative to the
//! manifest's directory so a dataset folder can move as one unit. Blank
//! lines and `#` comments are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::color::{ChromaFormat, Frame, Gamut, Transfer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::scene::{degrade, synth_scene};
use super::yuv::{read_yuv_header, write_yuv};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Paths as written in the file (relative to the manifest).
    pub lr_rel: String,
    pub hr_rel: String,
    pub seed: u64,
    /// Paths resolved against the manifest location, ready to open.
    pub lr_path: PathBuf,
    pub hr_path: PathBuf,
}

/// Manifest entries plus the upscaling factor derived from the pair headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub scale: usize,
}

pub fn write_manifest(
    path: impl AsRef<Path>,
    entries: &[(String, String, u64)],
) -> Result<()> {
    let p = path.as_ref();
    let mut text = String::new();
    for (lr, hr, seed) in entries {
        text.push_str(&format!("{lr}\t{hr}\t{seed}\n"));
    }
    fs::write(p, text).map_err(|e| Error::io(p.display().to_string(), e))
}

/// Parse a manifest without touching the referenced files.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let p = path.as_ref();
    let name = p.display().to_string();
    let text = fs::read_to_string(p).map_err(|e| Error::io(&name, e))?;
    let base = p.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::file(
                &name,
                format!("line {}: expected lr<TAB>hr<TAB>seed, got {} columns", lineno + 1, cols.len()),
            ));
        }
        let seed: u64 = cols[2].parse().map_err(|_| {
            Error::file(&name, format!("line {}: bad seed {:?}", lineno + 1, cols[2]))
        })?;
        entries.push(ManifestEntry {
            lr_rel: cols[0].to_string(),
            hr_rel: cols[1].to_string(),
            seed,
            lr_path: base.join(cols[0]),
            hr_path: base.join(cols[1]),
        });
    }
    Ok(entries)
}

/// Open every referenced pair's header and check the training contract:
/// LR is 8-bit BT.709 gamma, HR is 10-bit BT.2020 PQ, HR dims are an exact
/// 2x or 4x multiple of LR, and one scale holds across the whole set.
pub fn validate_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let p = path.as_ref();
    let name = p.display().to_string();
    let entries = read_manifest(p)?;
    let mut scale: Option<usize> = None;
    for e in &entries {
        let lr = read_yuv_header(&e.lr_path)?;
        let hr = read_yuv_header(&e.hr_path)?;
        if lr.bit_depth != 8 || lr.gamut != Gamut::Bt709 || lr.transfer != Transfer::GammaSdr {
            return Err(Error::file(
                &name,
                format!("{}: LR side must be 8-bit BT.709 gamma", e.lr_rel),
            ));
        }
        if hr.bit_depth != 10 || hr.gamut != Gamut::Bt2020 || hr.transfer != Transfer::Pq {
            return Err(Error::file(
                &name,
                format!("{}: HR side must be 10-bit BT.2020 PQ", e.hr_rel),
            ));
        }
        if lr.width == 0
            || hr.width % lr.width != 0
            || hr.height % lr.height != 0
            || hr.width / lr.width != hr.height / lr.height
        {
            return Err(Error::file(
                &name,
                format!(
                    "{}: HR {}x{} is not an integer multiple of LR {}x{}",
                    e.hr_rel, hr.width, hr.height, lr.width, lr.height
                ),
            ));
        }
        let s = (hr.width / lr.width) as usize;
        if s != 2 && s != 4 {
            return Err(Error::file(&name, format!("{}: scale {s} not 2 or 4", e.hr_rel)));
        }
        match scale {
            None => scale = Some(s),
            Some(prev) if prev != s => {
                return Err(Error::file(
                    &name,
                    format!("mixed scales {prev} and {s} in one manifest"),
                ));
            }
            _ => {}
        }
    }
    Ok(Manifest {
        entries,
        scale: scale.unwrap_or(0),
    })
}

/// Generate `scenes` paired files plus a manifest under `out_dir`. `w`/`h`
/// are the HR scene dimensions. Byte-identical for identical arguments.
pub fn generate_dataset(
    out_dir: impl AsRef<Path>,
    scenes: usize,
    w: usize,
    h: usize,
    scale: usize,
    seed: u64,
) -> Result<PathBuf> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut lines = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let scene_seed = seed.wrapping_add(i as u64);
        let hdr = synth_scene(scene_seed, w, h)?;
        let (lr, hr) = degrade(&hdr, scale)?;
        let lr_rel = format!("lr_{i:04}.yuv");
        let hr_rel = format!("hr_{i:04}.yuv");
        write_yuv(&lr, dir.join(&lr_rel))?;
        write_yuv(&hr, dir.join(&hr_rel))?;
        lines.push((lr_rel, hr_rel, scene_seed));
    }
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, &lines)?;
    Ok(manifest)
}

/// LR patch sizes the training recipe uses.
pub const PATCH_SIZES: [usize; 2] = [40, 80];

fn crop_planes(frame: &Frame, y0: usize, x0: usize, size: usize) -> Result<Tensor<f32>> {
    let w = frame.width();
    let mut data = Vec::with_capacity(3 * size * size);
    for plane in &frame.planes {
        let src = plane.data();
        for y in 0..size {
            let row = (y0 + y) * w + x0;
            data.extend_from_slice(&src[row..row + size]);
        }
    }
    Tensor::from_vec([1, 3, size, size], data)
}

/// Sample aligned patch pairs: the HR crop starts at scale times the LR
/// offset and spans scale times the LR patch. Both frames must be 4:4:4.
pub fn sample_patches(
    lr: &Frame,
    hr: &Frame,
    scale: usize,
    patch_lr: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
    if !PATCH_SIZES.contains(&patch_lr) {
        return Err(Error::arg(
            "sample_patches",
            format!("patch size {patch_lr} not one of {PATCH_SIZES:?}"),
        ));
    }
    if lr.chroma != ChromaFormat::Yuv444 || hr.chroma != ChromaFormat::Yuv444 {
        return Err(Error::arg(
            "sample_patches",
            "both frames must be 4:4:4; upsample chroma first",
        ));
    }
    let (lw, lh) = (lr.width(), lr.height());
    if hr.width() != lw * scale || hr.height() != lh * scale {
        return Err(Error::shape(
            "sample_patches",
            format!(
                "HR {}x{} is not {scale}x the LR {lw}x{lh}",
                hr.width(),
                hr.height()
            ),
        ));
    }
    if lw < patch_lr || lh < patch_lr {
        return Err(Error::arg(
            "sample_patches",
            format!("LR image {lw}x{lh} smaller than patch {patch_lr}"),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let y0 = rng.gen_range(0..=lh - patch_lr);
        let x0 = rng.gen_range(0..=lw - patch_lr);
        let lr_patch = crop_planes(lr, y0, x0, patch_lr)?;
        let hr_patch = crop_planes(hr, y0 * scale, x0 * scale, patch_lr * scale)?;
        out.push((lr_patch, hr_patch));
    }
    Ok(out)
}

/// Stack same-shaped `[1,c,h,w]` tensors into one `[n,c,h,w]` batch.
pub fn stack_batch(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    if items.is_empty() {
        return Err(Error::arg("stack_batch", "empty batch"));
    }
    let [n0, c, h, w] = items[0].shape();
    if n0 != 1 {
        return Err(Error::shape("stack_batch", format!("items must be [1,c,h,w], got {:?}", items[0].shape())));
    }
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for t in items {
        if t.shape() != items[0].shape() {
            return Err(Error::shape(
                "stack_batch",
                format!("{:?} vs {:?}", t.shape(), items[0].shape()),
            ));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec([items.len(), c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tmp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("gpgmnet-dataset-tests").join(name);
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn generate_validate_and_reproduce() {
        let dir = tmp_dir("gen");
        let manifest = generate_dataset(&dir, 2, 96, 64, 2, 11).unwrap();
        let m = validate_manifest(&manifest).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.scale, 2);
        assert_eq!(m.entries[0].seed, 11);
        assert_eq!(m.entries[1].seed, 12);

        // regeneration is byte-identical, including the manifest
        let dir2 = tmp_dir("gen2");
        generate_dataset(&dir2, 2, 96, 64, 2, 11).unwrap();
        for name in ["manifest.tsv", "lr_0000.yuv", "hr_0001.yuv"] {
            assert_eq!(
                fs::read(dir.join(name)).unwrap(),
                fs::read(dir2.join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tmp_dir("empty");
        let manifest = generate_dataset(&dir, 0, 32, 32, 2, 0).unwrap();
        let m = validate_manifest(&manifest).unwrap();
        assert!(m.entries.is_empty());
        assert_eq!(m.scale, 0);
    }

    #[test]
    fn manifest_parser_rejects_bad_lines() {
        let dir = tmp_dir("badlines");
        let p = dir.join("m.tsv");
        fs::write(&p, "# comment\n\na.yuv\tb.yuv\t5\n").unwrap();
        let entries = read_manifest(&p).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].seed, 5);
        assert_eq!(entries[0].lr_path, dir.join("a.yuv"));

        fs::write(&p, "a.yuv\tb.yuv\n").unwrap();
        assert!(read_manifest(&p).is_err());
        fs::write(&p, "a.yuv\tb.yuv\tnot-a-seed\n").unwrap();
        assert!(read_manifest(&p).is_err());
    }

    #[test]
    fn validate_catches_dimension_drift() {
        let dir = tmp_dir("drift");
        generate_dataset(&dir, 1, 64, 64, 2, 3).unwrap();
        // replace the HR file with one that is no longer 2x the LR
        let hdr = synth_scene(3, 96, 96).unwrap();
        let (_, hr) = degrade(&hdr, 2).unwrap();
        write_yuv(&hr, dir.join("hr_0000.yuv")).unwrap();
        assert!(validate_manifest(dir.join("manifest.tsv")).is_err());
    }

    #[test]
    fn validate_catches_wrong_colorimetry() {
        let dir = tmp_dir("tags");
        generate_dataset(&dir, 1, 64, 64, 2, 4).unwrap();
        // swap the LR and HR columns: tags no longer match the contract
        fs::write(dir.join("manifest.tsv"), "hr_0000.yuv\tlr_0000.yuv\t4\n").unwrap();
        assert!(validate_manifest(dir.join("manifest.tsv")).is_err());
    }

    #[test]
    fn patches_align_exactly_and_are_deterministic() {
        let hdr = synth_scene(9, 96, 96).unwrap();
        let (lr, hr) = degrade(&hdr, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let patches = sample_patches(&lr, &hr, 2, 40, 3, &mut rng).unwrap();
        assert_eq!(patches.len(), 3);
        for (lp, hp) in &patches {
            assert_eq!(lp.shape(), [1, 3, 40, 40]);
            assert_eq!(hp.shape(), [1, 3, 80, 80]);
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let again = sample_patches(&lr, &hr, 2, 40, 3, &mut rng2).unwrap();
        for ((a, b), (c, d)) in patches.iter().zip(again.iter()) {
            assert_eq!(a.data(), c.data());
            assert_eq!(b.data(), d.data());
        }

        // indexing oracle: locate the first lr patch in the lr frame, then
        // check the hr patch equals the hr crop at scale times that offset
        let (lp, hp) = &patches[0];
        let lw = lr.width();
        let mut found = None;
        'scan: for y0 in 0..=lr.height() - 40 {
            for x0 in 0..=lw - 40 {
                let mut ok = true;
                for x in 0..40 {
                    if lr.planes[0].data()[y0 * lw + x0 + x] != lp.data()[x] {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    let mut full = true;
                    'rows: for y in 0..40 {
                        for x in 0..40 {
                            if lr.planes[0].data()[(y0 + y) * lw + x0 + x]
                                != lp.at(0, 0, y, x)
                            {
                                full = false;
                                break 'rows;
                            }
                        }
                    }
                    if full {
                        found = Some((y0, x0));
                        break 'scan;
                    }
                }
            }
        }
        let (y0, x0) = found.expect("patch must come from the image");
        let hw = hr.width();
        for ch in 0..3 {
            for y in 0..80 {
                for x in 0..80 {
                    assert_eq!(
                        hp.at(0, ch, y, x),
                        hr.planes[ch].data()[(2 * y0 + y) * hw + 2 * x0 + x],
                        "hr patch mismatch at ({ch},{y},{x})"
                    );
                }
            }
        }
    }

    #[test]
    fn patch_preconditions_enforced() {
        let hdr = synth_scene(10, 64, 64).unwrap();
        let (lr, hr) = degrade(&hdr, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_patches(&lr, &hr, 2, 33, 1, &mut rng).is_err());
        assert!(sample_patches(&lr, &hr, 2, 40, 1, &mut rng).is_err()); // 32 < 40
        let big = synth_scene(10, 96, 96).unwrap();
        let (lr2, hr2) = degrade(&big, 2).unwrap();
        assert!(sample_patches(&lr2, &hr2, 4, 40, 1, &mut rng).is_err());
        assert!(sample_patches(&lr2, &hr2, 2, 40, 1, &mut rng).is_ok());
    }

    #[test]
    fn stack_batch_concatenates_along_n() {
        let a = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec([1, 2, 1, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let s = stack_batch(&[a.clone(), b]).unwrap();
        assert_eq!(s.shape(), [2, 2, 1, 2]);
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert!(stack_batch(&[]).is_err());
        let c = Tensor::from_vec([1, 1, 1, 2], vec![0.0, 0.0]).unwrap();
        assert!(stack_batch(&[a, c]).is_err());
    }
}
