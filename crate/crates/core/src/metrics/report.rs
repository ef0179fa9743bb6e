use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::foveation::ImageBuffer;
use crate::par::{self, ExecMode};

use super::depth::{depth_rmse, depth_threshold_accuracy, silog, DepthMap};
use super::descriptor::{early_features, embedding, patch_features};
use super::lowlevel::{gabor_diff, psnr, sobel_edge_diff, GaborParams};
use super::segment::{proto_object_miou, PROTO_CLUSTERS};
use super::similarity::{embed_distance, layer_cosine};

/// Per-pair measurements. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub pair_id: String,
    pub gabor_diff_0: f64,
    pub gabor_diff_45: f64,
    pub gabor_diff_90: f64,
    pub gabor_diff_135: f64,
    pub sobel_diff: f64,
    pub psnr_db: f64,
    pub layer_cosine_early: f64,
    pub layer_cosine_mid: f64,
    pub layer_cosine_late: f64,
    pub silog: f64,
    pub depth_rmse: f64,
    pub depth_delta_0_25: f64,
    pub depth_delta_1: f64,
    pub depth_delta_2: f64,
    pub depth_delta_3: f64,
    pub proto_miou: f64,
    pub embed_cosine: f64,
    pub embed_distance: f64,
}

/// Names of the numeric columns, in order.
pub const REPORT_FEATURES: [&str; 18] = [
    "gabor_diff_0",
    "gabor_diff_45",
    "gabor_diff_90",
    "gabor_diff_135",
    "sobel_diff",
    "psnr_db",
    "layer_cosine_early",
    "layer_cosine_mid",
    "layer_cosine_late",
    "silog",
    "depth_rmse",
    "depth_delta_0_25",
    "depth_delta_1",
    "depth_delta_2",
    "depth_delta_3",
    "proto_miou",
    "embed_cosine",
    "embed_distance",
];

impl FeatureReport {
    pub fn values(&self) -> [f64; 18] {
        [
            self.gabor_diff_0,
            self.gabor_diff_45,
            self.gabor_diff_90,
            self.gabor_diff_135,
            self.sobel_diff,
            self.psnr_db,
            self.layer_cosine_early,
            self.layer_cosine_mid,
            self.layer_cosine_late,
            self.silog,
            self.depth_rmse,
            self.depth_delta_0_25,
            self.depth_delta_1,
            self.depth_delta_2,
            self.depth_delta_3,
            self.proto_miou,
            self.embed_cosine,
            self.embed_distance,
        ]
    }
}

/// Externally computed inputs for one pair; anything missing falls back to
/// the built-in descriptors.
#[derive(Clone, Debug, Default)]
pub struct PairInputs {
    pub depth: Option<(DepthMap, DepthMap)>,
    pub layers: Option<[(Vec<f64>, Vec<f64>); 3]>,
    pub embeddings: Option<(Vec<f64>, Vec<f64>)>,
}

fn cosine_or_zero(a: &[f64], b: &[f64]) -> Result<f64> {
    match layer_cosine(a, b) {
        Ok(v) => Ok(v),
        // Two featureless (zero) maps are identical; one zero map shares nothing.
        Err(Error::UndefinedSimilarity(_)) => Ok(if a.iter().chain(b).all(|v| *v == 0.0) { 1.0 } else { 0.0 }),
        Err(e) => Err(e),
    }
}

/// Measures one (original, generated) pair.
pub fn compute_report(
    pair_id: &str,
    orig: &ImageBuffer,
    gen: &ImageBuffer,
    encoder: &ToyEncoder,
    inputs: &PairInputs,
) -> Result<FeatureReport> {
    let gp = GaborParams::default();
    let g = |o: f64| gabor_diff(orig, gen, o, &gp);
    let (da, db) = match &inputs.depth {
        Some((a, b)) => (a.clone(), b.clone()),
        None => (DepthMap::luminance_proxy(orig)?, DepthMap::luminance_proxy(gen)?),
    };
    let layers = match &inputs.layers {
        Some(l) => l.clone(),
        None => {
            let ta = encoder.encode(orig)?;
            let tb = encoder.encode(gen)?;
            let to_vec = |t: &crate::encoder::PatchTokenGrid| t.raw().iter().map(|&v| v as f64).collect::<Vec<_>>();
            [
                (early_features(orig), early_features(gen)),
                (to_vec(&ta), to_vec(&tb)),
                (embedding(orig), embedding(gen)),
            ]
        }
    };
    let (ea, eb) = match &inputs.embeddings {
        Some(e) => e.clone(),
        None => (embedding(orig), embedding(gen)),
    };
    let patch = encoder.config().patch_size;
    let miou = proto_object_miou(&patch_features(orig, patch), &patch_features(gen, patch), PROTO_CLUSTERS, 0)?;
    // `db` is the generated image's depth, `da` the original's (reference).
    Ok(FeatureReport {
        pair_id: pair_id.to_string(),
        gabor_diff_0: g(0.0)?,
        gabor_diff_45: g(45.0)?,
        gabor_diff_90: g(90.0)?,
        gabor_diff_135: g(135.0)?,
        sobel_diff: sobel_edge_diff(orig, gen)?,
        psnr_db: psnr(orig, gen)?,
        layer_cosine_early: cosine_or_zero(&layers[0].0, &layers[0].1)?,
        layer_cosine_mid: cosine_or_zero(&layers[1].0, &layers[1].1)?,
        layer_cosine_late: cosine_or_zero(&layers[2].0, &layers[2].1)?,
        silog: silog(&db, &da)?,
        depth_rmse: depth_rmse(&db, &da)?,
        depth_delta_0_25: depth_threshold_accuracy(&db, &da, 0.25)?,
        depth_delta_1: depth_threshold_accuracy(&db, &da, 1.0)?,
        depth_delta_2: depth_threshold_accuracy(&db, &da, 2.0)?,
        depth_delta_3: depth_threshold_accuracy(&db, &da, 3.0)?,
        proto_miou: miou,
        embed_cosine: cosine_or_zero(&ea, &eb)?,
        embed_distance: match embed_distance(&ea, &eb) {
            Ok(d) => d,
            Err(Error::UndefinedSimilarity(_)) => 1.0 - cosine_or_zero(&ea, &eb)?,
            Err(e) => return Err(e),
        },
    })
}

/// One pair to measure.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub pair_id: String,
    pub original: ImageBuffer,
    pub generated: ImageBuffer,
}

/// Measures many pairs across the worker pool; output is ordered by pair id.
pub fn build_reports(pairs: &[ImagePair], encoder: &ToyEncoder, mode: ExecMode) -> Result<Vec<FeatureReport>> {
    let mut out = par::map(mode, pairs, |p| {
        compute_report(&p.pair_id, &p.original, &p.generated, encoder, &PairInputs::default())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(out)
}

pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[FeatureReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for r in reports {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureReport>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Ingestion(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Ingestion(e.to_string())))
        .collect()
}

const VEC1_MAGIC: &[u8; 4] = b"VEC1";

/// Writes `rows` equal-length vectors as `VEC1`: magic, u32 rows, u32 dim,
/// then little-endian float32 values.
pub fn write_vec1(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::geometry("VEC1 rows must share one dimension"));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(VEC1_MAGIC)?;
    f.write_all(&(rows.len() as u32).to_le_bytes())?;
    f.write_all(&(dim as u32).to_le_bytes())?;
    for r in rows {
        for v in r {
            f.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_vec1(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != VEC1_MAGIC {
        return Err(Error::Ingestion("missing VEC1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() - 12 != rows * dim * 4 {
        return Err(Error::Ingestion("VEC1 body length does not match header".into()));
    }
    let vals: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Ingestion("VEC1 contains non-finite values".into()));
    }
    Ok(vals.chunks(dim.max(1)).take(rows).map(<[f64]>::to_vec).collect())
}

