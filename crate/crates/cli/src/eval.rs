use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use occrefine::kitti::{list_label_frames, read_invalid_mask, read_label_grid, LabelMap};
use occrefine::metrics::{accumulate_confusion, band_crop, iou, miou, AbsentClassPolicy, ConfusionMatrix};
use occrefine::{ClassId, Error, Taxonomy};

use crate::config::{FileConfig, GridArgs, RunConfig};
use crate::Outcome;

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Absent {
    /// Absent classes count as IoU 0
    Zero,
    /// Absent classes are left out of the mean
    Skip,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted .label files
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth .label files (and optional .invalid masks)
    #[arg(long)]
    gt: PathBuf,
    /// Forward ranges in meters evaluated in addition to the full volume
    #[arg(long, value_delimiter = ',')]
    bands: Option<Vec<f64>>,
    /// Also write the table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Treatment of classes absent from both prediction and ground truth
    #[arg(long, value_enum, default_value = "zero")]
    absent: Absent,
    /// Exit with status 1 when the full-volume mIoU is below this value
    #[arg(long)]
    min_miou: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
}

struct Row {
    band: String,
    iou: Option<f64>,
    miou: f64,
    per_class: Vec<Option<f64>>,
}

fn taxonomy_for(map: &LabelMap) -> Result<Taxonomy> {
    let kitti = Taxonomy::semantic_kitti();
    if map.num_classes() == kitti.num_classes() {
        return Ok(kitti);
    }
    let names = (1..=map.num_classes()).map(|c| format!("class_{c}")).collect();
    Ok(Taxonomy::custom(names, &[], None)?)
}

pub fn run(a: EvalArgs, file: &FileConfig) -> Result<Outcome> {
    let spec = a.grid.spec(file)?;
    let map = a.grid.label_map(file)?;
    let c = map.num_classes();
    let bands = a.bands.clone().or_else(|| file.bands.clone()).unwrap_or_default();
    let policy = match a.absent {
        Absent::Zero => AbsentClassPolicy::Zero,
        Absent::Skip => AbsentClassPolicy::Skip,
    };

    let pred_ids = list_label_frames(&a.pred)?;
    let gt_ids = list_label_frames(&a.gt)?;
    if pred_ids != gt_ids {
        let missing: Vec<u32> = gt_ids.iter().filter(|i| !pred_ids.contains(i)).copied().collect();
        let extra: Vec<u32> = pred_ids.iter().filter(|i| !gt_ids.contains(i)).copied().collect();
        bail!(Error::MissingData(format!(
            "frame mismatch: {} predictions vs {} ground-truth frames (missing {:?}, unexpected {:?})",
            pred_ids.len(),
            gt_ids.len(),
            &missing[..missing.len().min(5)],
            &extra[..extra.len().min(5)]
        )));
    }
    if gt_ids.is_empty() {
        bail!(Error::MissingData(format!("no .label files in {}", a.gt.display())));
    }

    let mut full = ConfusionMatrix::new(c);
    let mut banded = vec![ConfusionMatrix::new(c); bands.len()];
    for &id in &gt_ids {
        let name = format!("{id:06}");
        let pred = read_label_grid(&a.pred.join(format!("{name}.label")), spec, &map)?;
        let mut gt = read_label_grid(&a.gt.join(format!("{name}.label")), spec, &map)?;
        let mask_path = a.gt.join(format!("{name}.invalid"));
        if mask_path.is_file() {
            gt.apply_invalid_mask(&read_invalid_mask(&mask_path, spec)?)?;
        }
        full += &accumulate_confusion(&pred, &gt, c, true)?;
        for (cm, &d) in banded.iter_mut().zip(&bands) {
            *cm += &accumulate_confusion(&band_crop(&pred, d)?, &band_crop(&gt, d)?, c, true)?;
        }
    }

    let row = |band: String, cm: &ConfusionMatrix| {
        let m = miou(cm, policy);
        Row {
            band,
            iou: iou(cm),
            miou: m.miou,
            per_class: m.per_class,
        }
    };
    let mut rows = vec![row("full".into(), &full)];
    for (cm, d) in banded.iter().zip(&bands) {
        rows.push(row(format!("{d}m"), cm));
    }

    let tax = taxonomy_for(&map)?;
    let names: Vec<&str> = (1..=c).map(|k| tax.name(ClassId(k as u8)).unwrap_or("?")).collect();
    print!("{}", render_table(&rows, &names, gt_ids.len()));
    if let Some(p) = &a.csv {
        write_csv(p, &rows, &names)?;
    }

    let mut rc = RunConfig {
        subcommand: "eval".into(),
        inputs: vec![a.pred.clone(), a.gt.clone()],
        output: a.csv.clone(),
        bands: Some(bands),
        ..Default::default()
    };
    a.grid.fill(&spec, &mut rc);
    rc.echo(None)?;

    if let Some(min) = a.min_miou {
        if rows[0].miou < min {
            eprintln!("mIoU {:.2} is below the required {min:.2}", rows[0].miou);
            return Ok(Outcome::Failed);
        }
    }
    Ok(Outcome::Ok)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

fn render_table(rows: &[Row], names: &[&str], frames: usize) -> String {
    let mut s = format!("evaluated {frames} frames\n");
    let _ = write!(s, "{:<14}", "");
    for r in rows {
        let _ = write!(s, "{:>10}", r.band);
    }
    s.push('\n');
    let mut line = |label: &str, vals: Vec<String>| {
        let _ = write!(s, "{label:<14}");
        for v in vals {
            let _ = write!(s, "{v:>10}");
        }
        s.push('\n');
    };
    line("IoU", rows.iter().map(|r| fmt_opt(r.iou)).collect());
    line("mIoU", rows.iter().map(|r| format!("{:.2}", r.miou)).collect());
    for (k, name) in names.iter().enumerate() {
        line(name, rows.iter().map(|r| fmt_opt(r.per_class[k])).collect());
    }
    s
}

fn write_csv(path: &Path, rows: &[Row], names: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["band".to_string(), "iou".into(), "miou".into()];
    header.extend(names.iter().map(|n| n.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.band.clone(), fmt_opt(r.iou), format!("{:.4}", r.miou)];
        rec.extend(r.per_class.iter().map(|v| v.map(|x| format!("{x:.4}")).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
