//! One function per subcommand. Each echoes its resolved configuration,
//! does the work, and returns the process exit code (0 ok, 4 for failed
//! numerical checks); errors bubble up to main for classification.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use gpgmnet_core::color::{
    gamma_eotf, map_rgb, map_values, pq_eotf, pq_oetf, rgb_to_lab_image, rgb_to_yuv_image,
    tone_map_inverse, yuv_to_rgb_image, ChromaFormat, Frame, Gamut, Transfer, DEFAULT_KNEE,
};
use gpgmnet_core::io::{
    chroma_420_to_444, color_bar as make_color_bar, generate_dataset, load_weights, read_yuv_frames,
    save_weights, validate_manifest, write_ppm16, write_yuv, write_yuv_frames, COLOR_BAR_HUES,
};
use gpgmnet_core::metrics::{
    band_smoothness, color_histogram, lab_mse, mpsnr, ms_ssim, psnr_planes, ssim, LabMode,
    PsnrResult, HISTOGRAM_BINS, MPSNR_STOPS,
};
use gpgmnet_core::model::{
    gpgmnet_infer, gradsuite, param_breakdown, param_count, zero_params, ModelConfig,
};
use gpgmnet_core::train::{heldout_psnr, load_pair, TrainConfig};
use gpgmnet_core::{Error, Result, Tensor};

use crate::config;

/// Parameter bands the default configs must land in.
const PARAM_BANDS: [(usize, usize, usize); 2] = [
    (4, 740_000, 1_100_000),
    (2, 620_000, 920_000),
];

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn load_frames_444(path: &Path) -> Result<Vec<Frame>> {
    read_yuv_frames(path)?
        .into_iter()
        .map(|f| {
            if f.chroma == ChromaFormat::Yuv420 {
                chroma_420_to_444(&f)
            } else {
                Ok(f)
            }
        })
        .collect()
}

pub fn gen_data(out: &Path, scenes: usize, (w, h): (usize, usize), scale: usize, seed: u64) -> Result<u8> {
    if scenes == 0 {
        return Err(Error::Config("need at least one scene".into()));
    }
    println!("# gen-data config");
    println!("out = {}", out.display());
    println!("scenes = {scenes}");
    println!("size = {w}x{h}");
    println!("scale = {scale}");
    println!("seed = {seed}");
    let manifest = generate_dataset(out, scenes, w, h, scale, seed)?;
    let parsed = validate_manifest(&manifest)?;
    println!("manifest\t{}", manifest.display());
    println!("pairs\t{}", parsed.entries.len());
    Ok(0)
}

pub fn train(config: Option<&Path>, data: &Path, out: &Path, resume: Option<&Path>) -> Result<u8> {
    let (mc, tc) = config::load_configs(config)?;
    config::echo_model_config(&mc);
    config::echo_train_config(&tc);
    let manifest = validate_manifest(data)?;
    println!("# data: {} pairs at scale x{}", manifest.entries.len(), manifest.scale);
    if let Some(r) = resume {
        println!("# resuming from {}", r.display());
    }
    let t0 = Instant::now();
    let report = gpgmnet_core::train::train(&mc, &tc, &manifest, out, resume)?;
    let secs = t0.elapsed().as_secs_f64();
    let wpath = out.join("weights.gpgm");
    save_weights(&report.final_params, &wpath)?;
    println!("initial_loss\t{}", report.initial_loss);
    println!("final_loss\t{}", report.final_loss);
    if report.final_loss > 0.0 {
        println!("loss_ratio\t{}", report.initial_loss / report.final_loss);
    }
    for (iter, db) in &report.evals {
        println!("heldout_psnr_db\t{iter}\t{db}");
    }
    for p in &report.checkpoints {
        println!("checkpoint\t{}", p.display());
    }
    println!("weights\t{}", wpath.display());
    println!("seconds\t{secs:.1}");
    Ok(0)
}

pub fn infer(weights: &Path, input: &Path, out: &Path, config: Option<&Path>) -> Result<u8> {
    let mc = config::load_model_config(config)?;
    config::echo_model_config(&mc);
    let params = load_weights(weights, &mc)?;
    let frames = load_frames_444(input)?;
    let (w, h) = (frames[0].width(), frames[0].height());
    println!("# input: {} frame(s) {w}x{h} from {}", frames.len(), input.display());
    let t0 = Instant::now();
    let mut out_frames = Vec::with_capacity(frames.len());
    for f in &frames {
        let pred = gpgmnet_infer(&f.pixels()?, &params, &mc)?;
        let pred = map_values(&pred, |v| v.clamp(0.0, 1.0));
        out_frames.push(Frame::from_pixels(
            &pred,
            Gamut::Bt2020,
            Transfer::Pq,
            ChromaFormat::Yuv444,
            10,
        )?);
    }
    let secs = t0.elapsed().as_secs_f64();
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            mkdir(dir)?;
        }
    }
    write_yuv_frames(&out_frames, out)?;
    println!(
        "# output: {} frame(s) {}x{} to {}",
        out_frames.len(),
        out_frames[0].width(),
        out_frames[0].height(),
        out.display()
    );
    println!("seconds\t{secs:.2}");
    println!("seconds_per_frame\t{:.3}", secs / frames.len() as f64);
    Ok(0)
}

const ALL_METRICS: [&str; 6] = ["psnr", "ssim", "ms-ssim", "mpsnr", "lab-mse", "lab-mse-l"];

fn parse_metric_list(list: &str) -> Result<Vec<&'static str>> {
    let mut out: Vec<&'static str> = Vec::new();
    for item in list.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        if item == "all" {
            for m in ALL_METRICS {
                if !out.contains(&m) {
                    out.push(m);
                }
            }
            continue;
        }
        match ALL_METRICS.iter().find(|m| **m == item) {
            Some(m) => {
                if !out.contains(m) {
                    out.push(m);
                }
            }
            None => {
                return Err(Error::Config(format!(
                    "unknown metric {item:?}; choose from {} or all",
                    ALL_METRICS.join(", ")
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty metric list".into()));
    }
    Ok(out)
}

/// Code values -> linear light RGB in the frame's own gamut.
fn linear_rgb(f: &Frame) -> Result<Tensor<f32>> {
    let rgb = yuv_to_rgb_image(&f.pixels()?, f.gamut)?;
    let clamped = map_values(&rgb, |v| v.clamp(0.0, 1.0));
    Ok(match f.transfer {
        Transfer::Pq => map_values(&clamped, pq_eotf),
        Transfer::GammaSdr => map_values(&clamped, gamma_eotf),
        Transfer::Linear => clamped,
    })
}

pub fn eval(
    pred_path: &Path,
    ref_path: &Path,
    metric_list: &str,
    histogram: Option<&Path>,
    json: Option<&Path>,
) -> Result<u8> {
    let wanted = parse_metric_list(metric_list)?;
    let preds = load_frames_444(pred_path)?;
    let refs = load_frames_444(ref_path)?;
    if preds.len() != refs.len() {
        return Err(Error::file(
            pred_path.display().to_string(),
            format!("{} frames vs {} in reference", preds.len(), refs.len()),
        ));
    }
    for (i, (p, r)) in preds.iter().zip(&refs).enumerate() {
        if p.width() != r.width() || p.height() != r.height() {
            return Err(Error::shape(
                "eval",
                format!(
                    "frame {i}: {}x{} vs {}x{}",
                    p.width(),
                    p.height(),
                    r.width(),
                    r.height()
                ),
            ));
        }
    }
    println!("# eval config");
    println!("pred = {}", pred_path.display());
    println!("ref = {}", ref_path.display());
    println!("frames = {}", preds.len());
    println!("metrics = {}", wanted.join(","));

    let n = preds.len() as f64;
    let mut results: Vec<(&'static str, f64)> = Vec::new();
    for metric in &wanted {
        let value = match *metric {
            // one MSE pooled over every plane of every frame
            "psnr" => {
                let a: Vec<Tensor<f32>> = preds.iter().flat_map(|f| f.planes.clone()).collect();
                let b: Vec<Tensor<f32>> = refs.iter().flat_map(|f| f.planes.clone()).collect();
                match psnr_planes(&a, &b, 1.0)? {
                    PsnrResult::Db(v) => v,
                    PsnrResult::Infinite => f64::INFINITY,
                }
            }
            // luma only, averaged over frames
            "ssim" => {
                let mut s = 0.0;
                for (p, r) in preds.iter().zip(&refs) {
                    s += ssim(&p.planes[0], &r.planes[0])?;
                }
                s / n
            }
            "ms-ssim" => {
                let mut s = 0.0;
                let mut scales = 0;
                for (p, r) in preds.iter().zip(&refs) {
                    let m = ms_ssim(&p.planes[0], &r.planes[0])?;
                    s += m.value;
                    scales = m.scales;
                }
                println!("# ms-ssim scales = {scales}");
                s / n
            }
            "mpsnr" => {
                let mut s = 0.0;
                for (p, r) in preds.iter().zip(&refs) {
                    match mpsnr(&linear_rgb(p)?, &linear_rgb(r)?, &MPSNR_STOPS)? {
                        PsnrResult::Db(v) => s += v,
                        PsnrResult::Infinite => {
                            s = f64::INFINITY;
                            break;
                        }
                    }
                }
                if s.is_finite() {
                    s / n
                } else {
                    s
                }
            }
            "lab-mse" | "lab-mse-l" => {
                let mode = if *metric == "lab-mse" {
                    LabMode::Lab
                } else {
                    LabMode::LOnly
                };
                let mut s = 0.0;
                for (p, r) in preds.iter().zip(&refs) {
                    let la = rgb_to_lab_image(&linear_rgb(p)?, p.gamut)?;
                    let lb = rgb_to_lab_image(&linear_rgb(r)?, r.gamut)?;
                    s += lab_mse(&la, &lb, mode)?;
                }
                s / n
            }
            other => unreachable!("unvetted metric {other}"),
        };
        if value.is_finite() {
            println!("{metric}\t{value}");
        } else {
            println!("{metric}\tinf");
        }
        results.push((metric, value));
    }

    if let Some(path) = histogram {
        write_histogram_tsv(&preds, &refs, path)?;
        println!("histogram\t{}", path.display());
    }
    if let Some(path) = json {
        let mut metrics = serde_json::Map::new();
        for (name, value) in &results {
            let v = if value.is_finite() {
                serde_json::json!(value)
            } else {
                serde_json::json!("inf")
            };
            metrics.insert((*name).to_string(), v);
        }
        let doc = serde_json::json!({
            "pred": pred_path.display().to_string(),
            "ref": ref_path.display().to_string(),
            "frames": preds.len(),
            "metrics": metrics,
        });
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Config(format!("json encode: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))?;
        println!("json\t{}", path.display());
    }
    Ok(0)
}

/// Per-channel code-value histograms of both inputs plus their bin ratio.
fn write_histogram_tsv(preds: &[Frame], refs: &[Frame], path: &Path) -> Result<()> {
    let accumulate = |frames: &[Frame]| -> Result<Vec<Vec<u64>>> {
        let mut total: Vec<Vec<u64>> = vec![vec![0; HISTOGRAM_BINS]; 3];
        for f in frames {
            let h = color_histogram(&f.pixels()?, HISTOGRAM_BINS)?;
            for (t, src) in total.iter_mut().zip(&h) {
                for (a, b) in t.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        Ok(total)
    };
    let hp = accumulate(preds)?;
    let hr = accumulate(refs)?;
    let mut text = String::from("channel\tbin\tpred\tref\tratio\n");
    for (ch, name) in ["y", "u", "v"].iter().enumerate() {
        let ratio = gpgmnet_core::metrics::normalize_histogram(&hp[ch], &hr[ch])?;
        for bin in 0..HISTOGRAM_BINS {
            text.push_str(&format!(
                "{name}\t{bin}\t{}\t{}\t{}\n",
                hp[ch][bin], hr[ch][bin], ratio[bin]
            ));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn grad_check() -> Result<u8> {
    println!("# finite-difference gradient checks");
    let results = gradsuite::run_all()?;
    let mut ok = true;
    for r in &results {
        println!("{}", r.line());
        ok &= r.pass;
    }
    if ok {
        println!("all {} checks passed", results.len());
        Ok(0)
    } else {
        eprintln!("error: gradient checks failed");
        Ok(4)
    }
}

fn print_breakdown(mc: &ModelConfig) -> Result<usize> {
    let params = zero_params(mc)?;
    for (module, count) in param_breakdown(&params) {
        println!("{module}\t{count}");
    }
    let total = param_count(&params);
    println!("total\t{total}");
    Ok(total)
}

pub fn param_count_cmd(config: Option<&Path>) -> Result<u8> {
    if let Some(path) = config {
        let mc = config::load_model_config(Some(path))?;
        config::echo_model_config(&mc);
        print_breakdown(&mc)?;
        return Ok(0);
    }
    let mut ok = true;
    for (scale, lo, hi) in PARAM_BANDS {
        let mc = ModelConfig {
            scale,
            ..ModelConfig::default()
        };
        mc.validate()?;
        println!("# default config, scale x{scale}");
        let total = print_breakdown(&mc)?;
        let pass = (lo..=hi).contains(&total);
        println!(
            "band\t[{lo}, {hi}]\t{}",
            if pass { "pass" } else { "FAIL" }
        );
        ok &= pass;
    }
    if ok {
        Ok(0)
    } else {
        eprintln!("error: parameter count outside the expected band");
        Ok(4)
    }
}

const BAR_NAMES: [&str; 7] = ["white", "red", "green", "blue", "yellow", "cyan", "magenta"];

/// SDR code values -> the exact HDR mapping the data synthesis inverts:
/// gamma decode, inverse tone map, PQ encode, BT.2020 YUV.
fn exact_hdr_mapping(sdr: &Frame) -> Result<Tensor<f32>> {
    let rgb = yuv_to_rgb_image(&sdr.pixels()?, Gamut::Bt709)?;
    let mapped = map_rgb(&rgb, |c| {
        let lin = [
            gamma_eotf(c[0].clamp(0.0, 1.0)),
            gamma_eotf(c[1].clamp(0.0, 1.0)),
            gamma_eotf(c[2].clamp(0.0, 1.0)),
        ];
        match tone_map_inverse(lin, DEFAULT_KNEE) {
            Some(hdr) => [pq_oetf(hdr[0]), pq_oetf(hdr[1]), pq_oetf(hdr[2])],
            None => [f64::NAN; 3],
        }
    })?;
    if mapped.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::arg(
            "color-bar",
            "exact inverse mapping undefined for some pixel",
        ));
    }
    rgb_to_yuv_image(&mapped, Gamut::Bt2020)
}

fn write_preview_ppm(yuv: &Tensor<f32>, gamut: Gamut, path: &Path) -> Result<()> {
    let rgb = yuv_to_rgb_image(yuv, gamut)?;
    write_ppm16(&map_values(&rgb, |v| v.clamp(0.0, 1.0)), path)
}

pub fn color_bar_cmd(
    weights: &Path,
    out_dir: &Path,
    config: Option<&Path>,
    (w, h): (usize, usize),
) -> Result<u8> {
    let mc = config::load_model_config(config)?;
    config::echo_model_config(&mc);
    println!("# color bar {w}x{h}, output {}x{}", w * mc.scale, h * mc.scale);
    let params = load_weights(weights, &mc)?;
    mkdir(out_dir)?;

    let bar = make_color_bar(w, h)?;
    let px = bar.pixels()?;
    let pred = map_values(&gpgmnet_infer(&px, &params, &mc)?, |v| v.clamp(0.0, 1.0));
    let gt = exact_hdr_mapping(&make_color_bar(w * mc.scale, h * mc.scale)?)?;

    let out_frame = Frame::from_pixels(&pred, Gamut::Bt2020, Transfer::Pq, ChromaFormat::Yuv444, 10)?;
    let gt_frame = Frame::from_pixels(&gt, Gamut::Bt2020, Transfer::Pq, ChromaFormat::Yuv444, 10)?;
    write_yuv(&out_frame, out_dir.join("output.yuv"))?;
    write_yuv(&gt_frame, out_dir.join("gt.yuv"))?;
    write_preview_ppm(&px, Gamut::Bt709, &out_dir.join("input.ppm"))?;
    write_preview_ppm(&pred, Gamut::Bt2020, &out_dir.join("output.ppm"))?;
    write_preview_ppm(&gt, Gamut::Bt2020, &out_dir.join("gt.ppm"))?;

    let bands = COLOR_BAR_HUES.len();
    let sm_model = band_smoothness(&pred, bands)?;
    let sm_gt = band_smoothness(&gt, bands)?;
    let mut text = String::from("band\thue\tmodel\texact\tratio\n");
    println!("band\thue\tmodel\texact\tratio");
    for b in 0..bands {
        let ratio = if sm_gt[b] > 0.0 {
            sm_model[b] / sm_gt[b]
        } else {
            f64::INFINITY
        };
        let row = format!("{b}\t{}\t{}\t{}\t{ratio}", BAR_NAMES[b], sm_model[b], sm_gt[b]);
        println!("{row}");
        text.push_str(&row);
        text.push('\n');
    }
    let mean_model = sm_model.iter().sum::<f64>() / bands as f64;
    let mean_gt = sm_gt.iter().sum::<f64>() / bands as f64;
    let overall = format!(
        "overall\t-\t{mean_model}\t{mean_gt}\t{}",
        mean_model / mean_gt
    );
    println!("{overall}");
    text.push_str(&overall);
    text.push('\n');
    let tsv = out_dir.join("smoothness.tsv");
    fs::write(&tsv, text).map_err(|e| Error::io(tsv.display().to_string(), e))?;
    println!("smoothness\t{}", tsv.display());
    Ok(0)
}

const AXIS_KEYS: [&str; 3] = ["branch_mask", "ccp_guided_filter", "modulation"];

pub fn ablate(grid: &Path, data: &Path, out: &Path) -> Result<u8> {
    let mut axes: BTreeMap<&'static str, Vec<String>> = BTreeMap::new();
    let mut base: Vec<(String, String)> = Vec::new();
    for (k, v) in config::read_kv_file(grid)? {
        match AXIS_KEYS.iter().find(|a| **a == k) {
            Some(axis) => {
                let values: Vec<String> =
                    v.split(',').map(|s| s.trim().to_string()).collect();
                axes.insert(axis, values);
            }
            None => base.push((k, v)),
        }
    }
    let mut mc0 = ModelConfig::default();
    let mut tc = TrainConfig::default();
    for (k, v) in &base {
        if config::TRAIN_KEYS.contains(&k.as_str()) {
            tc.apply_kv(k, v)?;
        } else {
            mc0.apply_kv(k, v)?;
        }
    }
    tc.validate()?;
    let one = |key: &str, fallback: String| -> Vec<String> {
        axes.get(key).cloned().unwrap_or_else(|| vec![fallback])
    };
    let branch_values = one("branch_mask", mc0.branch_mask.to_string());
    let gf_values = one("ccp_guided_filter", mc0.ccp_guided_filter.to_string());
    let mod_values = one("modulation", mc0.modulation.to_string());

    config::echo_model_config(&mc0);
    config::echo_train_config(&tc);
    println!("# axes");
    println!("branch_mask = {}", branch_values.join(","));
    println!("ccp_guided_filter = {}", gf_values.join(","));
    println!("modulation = {}", mod_values.join(","));

    let manifest = validate_manifest(data)?;
    let last = manifest.entries.last().ok_or_else(|| {
        Error::Config("manifest has no pairs".into())
    })?;
    let heldout = load_pair(&last.lr_path, &last.hr_path)?;

    mkdir(out)?;
    let table_path = out.join("ablation.tsv");
    let mut table = fs::File::create(&table_path)
        .map_err(|e| Error::io(table_path.display().to_string(), e))?;
    let header = "variant\tbranch_mask\tguided_filter\tmodulation\tparams\tfinal_loss\theldout_psnr_db";
    writeln!(table, "{header}").map_err(|e| Error::io(table_path.display().to_string(), e))?;
    println!("{header}");

    for bm in &branch_values {
        for gf in &gf_values {
            for md in &mod_values {
                let mut mc = mc0.clone();
                mc.apply_kv("branch_mask", bm)?;
                mc.apply_kv("ccp_guided_filter", gf)?;
                mc.apply_kv("modulation", md)?;
                mc.validate()?;
                let name = format!(
                    "{}_{}_{}",
                    mc.branch_mask,
                    if mc.ccp_guided_filter { "gf" } else { "nogf" },
                    mc.modulation
                );
                let variant_dir = out.join(&name);
                let report =
                    gpgmnet_core::train::train(&mc, &tc, &manifest, &variant_dir, None)?;
                save_weights(&report.final_params, variant_dir.join("weights.gpgm"))?;
                let n_params = param_count(&report.final_params);
                let db = heldout_psnr(&report.final_params, &mc, &heldout)?;
                let row = format!(
                    "{name}\t{}\t{}\t{}\t{n_params}\t{}\t{db}",
                    mc.branch_mask, mc.ccp_guided_filter, mc.modulation, report.final_loss
                );
                // flush per row so a later failure still leaves the table so far
                writeln!(table, "{row}")
                    .and_then(|_| table.flush())
                    .map_err(|e| Error::io(table_path.display().to_string(), e))?;
                println!("{row}");
            }
        }
    }
    println!("table\t{}", table_path.display());
    Ok(0)
}
