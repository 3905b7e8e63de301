//! Retrieval metrics and whole-split scoring.

use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{Batch, LoadedSample, PAD_ID};
use crate::error::{Error, Result};
use crate::model::{Modality, Model};
use crate::nn::ParamStore;
use crate::objectives::{fine_grained, normalize, pose_rgb};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Samples encoded per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RetrievalDirection {
    #[serde(rename = "t2v")]
    TextToVideo,
    #[serde(rename = "v2t")]
    VideoToText,
}

impl RetrievalDirection {
    pub fn name(self) -> &'static str {
        match self {
            RetrievalDirection::TextToVideo => "t2v",
            RetrievalDirection::VideoToText => "v2t",
        }
    }
}

/// Rank of the ground truth for every query. `m` is a square `[text, video]`
/// score matrix: text-to-video queries rank row `i`, video-to-text queries
/// rank column `i`. Higher scores rank first; equal scores go to the lower
/// candidate index.
pub fn rank_queries(m: &Tensor<f64>, dir: RetrievalDirection) -> Result<Vec<usize>> {
    let s = m.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::invalid("rank_queries", format!("score matrix must be square, got {s:?}")));
    }
    let b = s[0];
    let score = |query: usize, cand: usize| match dir {
        RetrievalDirection::TextToVideo => m.data()[query * b + cand],
        RetrievalDirection::VideoToText => m.data()[cand * b + query],
    };
    Ok((0..b)
        .map(|q| {
            let gt = score(q, q);
            1 + (0..b).filter(|&c| score(q, c) > gt || (c < q && score(q, c) == gt)).count()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: RetrievalDirection,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub medr: f64,
    pub ranks: Vec<usize>,
}

pub fn report(ranks: &[usize], direction: RetrievalDirection) -> Result<RetrievalReport> {
    if ranks.is_empty() {
        return Err(Error::invalid("report", "no ranks"));
    }
    let n = ranks.len() as f64;
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let medr = if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    };
    Ok(RetrievalReport {
        direction,
        r1: recall(1),
        r5: recall(5),
        r10: recall(10),
        medr,
        ranks: ranks.to_vec(),
    })
}

/// Features of a whole split. Text rows are padded to the longest text.
#[derive(Clone, Debug)]
pub struct EncodedSplit<T> {
    pub ids: Vec<String>,
    /// `[N, T, D]` each.
    pub pose: Tensor<T>,
    pub rgb: Tensor<T>,
    pub fused: Tensor<T>,
    pub clip_mask: Vec<bool>,
    /// `[N, L, D]`.
    pub text: Tensor<T>,
    pub token_mask: Vec<bool>,
}

impl<T: Scalar> EncodedSplit<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn video(&self, m: Modality) -> &Tensor<T> {
        match m {
            Modality::Fused => &self.fused,
            Modality::Pose => &self.pose,
            Modality::Rgb => &self.rgb,
        }
    }
}

fn stack<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
    Tensor::new(shape, parts.iter().flat_map(|p| p.data().iter().copied()).collect())
}

/// Encodes every sample with frozen parameters, `EVAL_CHUNK` videos at a time.
pub fn encode_split<T: Scalar>(model: &Model, store: &ParamStore<T>, samples: &[LoadedSample]) -> Result<EncodedSplit<T>> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate", "split has no samples"));
    }
    let (mut pose, mut rgb, mut fused) = (Vec::new(), Vec::new(), Vec::new());
    let mut clip_mask = Vec::new();
    for chunk in samples.chunks(EVAL_CHUNK) {
        let batch = Batch::<T>::assemble(&chunk.iter().collect::<Vec<_>>())?;
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let (fp, fr, fv) = model.encode_video(&p, &batch)?;
        pose.push(fp.value());
        rgb.push(fr.value());
        fused.push(fv.value());
        clip_mask.extend_from_slice(&batch.clip_mask);
    }
    let words = samples.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
    let mut tokens = vec![PAD_ID; samples.len() * words];
    let mut token_mask = vec![false; samples.len() * words];
    for (i, s) in samples.iter().enumerate() {
        tokens[i * words..i * words + s.tokens.len()].copy_from_slice(&s.tokens);
        token_mask[i * words..i * words + s.tokens.len()].fill(true);
    }
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let text = model.encode_text(&p, &tokens, &token_mask, samples.len())?.value();
    Ok(EncodedSplit {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        pose: stack(&pose)?,
        rgb: stack(&rgb)?,
        fused: stack(&fused)?,
        clip_mask,
        text,
        token_mask,
    })
}

/// All-pairs `[text, video]` score matrices of one video stream.
#[derive(Clone, Debug)]
pub struct SplitScores {
    pub m_t2k: Tensor<f64>,
    pub m_k2t: Tensor<f64>,
}

pub fn split_scores<T: Scalar>(enc: &EncodedSplit<T>, modality: Modality, normalize_features: bool) -> Result<SplitScores> {
    let tape = Tape::new();
    let prep = |x: &Tensor<T>| {
        let v = tape.constant(x.clone());
        if normalize_features {
            normalize(&v)
        } else {
            Ok(v)
        }
    };
    let g = fine_grained(&prep(enc.video(modality))?, &enc.clip_mask, &prep(&enc.text)?, &enc.token_mask)?;
    Ok(SplitScores {
        m_t2k: g.m_t2k.value().cast(),
        m_k2t: g.m_k2t.value().cast(),
    })
}

/// `[pose video, RGB video]` matching scores over a split.
pub fn split_pose_rgb<T: Scalar>(enc: &EncodedSplit<T>, normalize_features: bool) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let tape = Tape::new();
    let prep = |x: &Tensor<T>| {
        let v = tape.constant(x.clone());
        if normalize_features {
            normalize(&v)
        } else {
            Ok(v)
        }
    };
    let s = pose_rgb(&prep(&enc.pose)?, &prep(&enc.rgb)?, &enc.clip_mask)?;
    Ok((s.s_p2r.value().cast(), s.s_r2p.value().cast()))
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub t2v: RetrievalReport,
    pub v2t: RetrievalReport,
    pub scores: SplitScores,
}

/// Text-to-video ranks rows of `M_t2k`; video-to-text ranks columns of
/// `M_k2t`.
pub fn evaluate_encoded<T: Scalar>(enc: &EncodedSplit<T>, modality: Modality, normalize_features: bool) -> Result<Evaluation> {
    let scores = split_scores(enc, modality, normalize_features)?;
    let t2v = report(
        &rank_queries(&scores.m_t2k, RetrievalDirection::TextToVideo)?,
        RetrievalDirection::TextToVideo,
    )?;
    let v2t = report(
        &rank_queries(&scores.m_k2t, RetrievalDirection::VideoToText)?,
        RetrievalDirection::VideoToText,
    )?;
    Ok(Evaluation { t2v, v2t, scores })
}

pub fn evaluate<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    samples: &[LoadedSample],
    modality: Modality,
) -> Result<Evaluation> {
    let enc = encode_split(model, store, samples)?;
    evaluate_encoded(&enc, modality, model.cfg.normalize)
}

/// One exported sample: file names of its clip/word matrices `[T, L]` per
/// stream and its pose/RGB clip matrix `[T, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedSample {
    pub id: String,
    pub index: usize,
    pub e_pose: String,
    pub e_rgb: String,
    pub e_fused: String,
    pub v_pose_rgb: String,
}

/// JSON sidecar written next to the exported tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportIndex {
    /// Row/column order of the split-level matrices.
    pub ids: Vec<String>,
    pub m_t2k: String,
    pub m_k2t: String,
    pub s_p2r: String,
    pub s_r2p: String,
    pub samples: Vec<ExportedSample>,
}

pub const EXPORT_INDEX_FILE: &str = "similarity.json";

fn rows<T: Scalar>(x: &Tensor<T>, i: usize) -> Result<Tensor<T>> {
    let (t, d) = (x.shape()[1], x.shape()[2]);
    Tensor::new([t, d], x.data()[i * t * d..(i + 1) * t * d].to_vec())
}

/// Writes fused-stream `M` matrices, pose/RGB `S` matrices over the split
/// and, for each selected id, its `E` matrices (pose, RGB, fused against its
/// own text) and `V` matrix, plus `similarity.json`.
pub fn export_similarity<T: Scalar>(
    enc: &EncodedSplit<T>,
    normalize_features: bool,
    selected: &[String],
    dir: &std::path::Path,
) -> Result<ExportIndex> {
    use crate::objectives::{fine_grained_similarity, pose_rgb_similarity};
    use crate::tensor::write_tensor;

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let prep = |x: &Tensor<T>| -> Result<Tensor<T>> {
        if !normalize_features {
            return Ok(x.clone());
        }
        let tape = Tape::new();
        Ok(normalize(&tape.constant(x.clone()))?.value())
    };
    let (pose, rgb, fused, text) = (prep(&enc.pose)?, prep(&enc.rgb)?, prep(&enc.fused)?, prep(&enc.text)?);
    let scores = split_scores(enc, Modality::Fused, normalize_features)?;
    let (s_p2r, s_r2p) = split_pose_rgb(enc, normalize_features)?;
    let save = |name: String, t: &Tensor<f64>| -> Result<String> {
        write_tensor(dir.join(&name), t)?;
        Ok(name)
    };
    let mut index = ExportIndex {
        ids: enc.ids.clone(),
        m_t2k: save("m_t2k.sedt".into(), &scores.m_t2k)?,
        m_k2t: save("m_k2t.sedt".into(), &scores.m_k2t)?,
        s_p2r: save("s_p2r.sedt".into(), &s_p2r)?,
        s_r2p: save("s_r2p.sedt".into(), &s_r2p)?,
        samples: Vec::new(),
    };
    let (t, l) = (enc.pose.shape()[1], enc.text.shape()[1]);
    for id in selected {
        let i = enc
            .ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::invalid("export", format!("sample {id:?} is not in the evaluated split")))?;
        let cm = &enc.clip_mask[i * t..(i + 1) * t];
        let wm = &enc.token_mask[i * l..(i + 1) * l];
        let w = rows(&text, i)?;
        let e = |x: &Tensor<T>| -> Result<Tensor<f64>> { Ok(fine_grained_similarity(&rows(x, i)?, cm, &w, wm)?.e.cast()) };
        let v = pose_rgb_similarity(&rows(&pose, i)?, &rows(&rgb, i)?, cm)?.v.cast();
        index.samples.push(ExportedSample {
            id: id.clone(),
            index: i,
            e_pose: save(format!("{id}.e_pose.sedt"), &e(&pose)?)?,
            e_rgb: save(format!("{id}.e_rgb.sedt"), &e(&rgb)?)?,
            e_fused: save(format!("{id}.e_fused.sedt"), &e(&fused)?)?,
            v_pose_rgb: save(format!("{id}.v_pose_rgb.sedt"), &v)?,
        });
    }
    let path = dir.join(EXPORT_INDEX_FILE);
    let text = serde_json::to_string_pretty(&index).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(index)
}
