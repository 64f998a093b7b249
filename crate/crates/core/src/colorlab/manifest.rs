//! Directory-level augmentation with a per-image parameter manifest.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::io::{list_images, load_rgb, save_rgb};
use super::{derive_seed, rica_apply, sample_rica_params_seeded, RicaParams, RicaRanges};
use crate::error::{Error, IoContext, Result};

pub const MANIFEST_HEADER: [&str; 14] = [
    "input", "seed", "muL", "sigmaL", "SL", "TL", "muA", "sigmaA", "SA", "TA", "muB", "sigmaB",
    "SB", "TB",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub input: String,
    pub seed: u64,
    pub params: RicaParams,
}

pub fn write_manifest<W: std::io::Write>(out: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_HEADER)?;
    for row in rows {
        let mut rec = vec![row.input.clone(), row.seed.to_string()];
        for p in &row.params.channels {
            for v in [p.target_mean, p.target_std, p.span, p.start] {
                rec.push(v.to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: PathBuf::from("<manifest>"),
        source: e,
    })?;
    Ok(())
}

pub fn read_manifest<R: std::io::Read>(input: R) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Config(format!("unexpected manifest header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Config(format!("bad manifest value '{}'", &rec[i])))
        };
        let seed = rec[1]
            .parse()
            .map_err(|_| Error::Config(format!("bad seed '{}'", &rec[1])))?;
        let mut params = RicaParams {
            channels: [Default::default(); 3],
        };
        for (c, p) in params.channels.iter_mut().enumerate() {
            let base = 2 + 4 * c;
            p.target_mean = num(base)?;
            p.target_std = num(base + 1)?;
            p.span = num(base + 2)?;
            p.start = num(base + 3)?;
        }
        rows.push(ManifestRow {
            input: rec[0].to_owned(),
            seed,
            params,
        });
    }
    Ok(rows)
}

/// Augments every image in `input_dir` once, writing PNGs with the same stem
/// into `output_dir`. Image `i` (in sorted file-name order) uses seed
/// `derive_seed(seed, i)`, so the output is independent of `workers`.
pub fn augment_dir(
    input_dir: &Path,
    output_dir: &Path,
    seed: u64,
    ranges: &RicaRanges,
    workers: usize,
) -> Result<Vec<ManifestRow>> {
    ranges.validate()?;
    let files = list_images(input_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDir(input_dir.to_path_buf()));
    }
    std::fs::create_dir_all(output_dir).at(output_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let rows: Result<Vec<ManifestRow>> = pool.install(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let item_seed = derive_seed(seed, i as u64);
                let params = sample_rica_params_seeded(item_seed, ranges)?;
                let out = rica_apply(&load_rgb(path)?, &params, ranges.mode);
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                save_rgb(&output_dir.join(format!("{stem}.png")), &out)?;
                Ok(ManifestRow {
                    input: path.display().to_string(),
                    seed: item_seed,
                    params,
                })
            })
            .collect()
    });
    let rows = rows?;
    let manifest_path = output_dir.join("manifest.csv");
    let file = std::fs::File::create(&manifest_path).at(&manifest_path)?;
    write_manifest(file, &rows)?;
    Ok(rows)
}
