//! The TSN1 artifact container: 4 magic bytes, a little-endian u32 manifest
//! length, a canonical UTF-8 JSON manifest, then concatenated little-endian
//! row-major arrays. One format for checkpoints, sensitivity maps, masks,
//! and perturbation records; a payload SHA-256 in the manifest catches any
//! payload corruption.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TokenizerSpec;
use crate::error::{Error, Result};
use crate::fisher::SensitivityMap;
use crate::mask::{MaskMatrix, MaskProvenance, MaskSource, SparsityMask};
use crate::model::{
    CheckpointMeta, LayerWeights, LossMode, MatrixId, MatrixKind, ModelCheckpoint, ModelConfig,
    PerMatrix,
};
use crate::perturb::{MatrixPerturbation, PerturbMode, PerturbationRecord};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::sha256_hex;

pub const MAGIC: &[u8; 4] = b"TSN1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Checkpoint,
    Sensitivity,
    Mask,
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U32,
}

impl Dtype {
    pub fn byte_width(self) -> usize {
        4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: ArtifactKind,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub fingerprints: BTreeMap<String, String>,
    pub tool_version: String,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    pub payload: Vec<u8>,
}

/// Incremental payload builder keeping offsets consistent.
pub struct ContainerBuilder {
    kind: ArtifactKind,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
    fingerprints: BTreeMap<String, String>,
    payload: Vec<u8>,
}

impl ContainerBuilder {
    pub fn new(kind: ArtifactKind, config: serde_json::Value) -> Self {
        ContainerBuilder {
            kind,
            config,
            tensors: Vec::new(),
            fingerprints: BTreeMap::new(),
            payload: Vec::new(),
        }
    }

    pub fn fingerprint(mut self, key: &str, value: String) -> Self {
        self.fingerprints.insert(key.into(), value);
        self
    }

    pub fn push_f32(&mut self, name: &str, shape: Vec<usize>, data: impl Iterator<Item = f32>) {
        let offset = self.payload.len() as u64;
        let mut count = 0usize;
        for v in data {
            self.payload.extend_from_slice(&v.to_le_bytes());
            count += 1;
        }
        debug_assert_eq!(count, shape.iter().product::<usize>());
        self.tensors.push(TensorEntry {
            name: name.into(),
            dtype: Dtype::F32,
            shape,
            byte_offset: offset,
            byte_length: (count * 4) as u64,
        });
    }

    pub fn push_u32(&mut self, name: &str, shape: Vec<usize>, data: impl Iterator<Item = u32>) {
        let offset = self.payload.len() as u64;
        let mut count = 0usize;
        for v in data {
            self.payload.extend_from_slice(&v.to_le_bytes());
            count += 1;
        }
        debug_assert_eq!(count, shape.iter().product::<usize>());
        self.tensors.push(TensorEntry {
            name: name.into(),
            dtype: Dtype::U32,
            shape,
            byte_offset: offset,
            byte_length: (count * 4) as u64,
        });
    }

    pub fn build(self) -> Container {
        Container {
            manifest: Manifest {
                kind: self.kind,
                config: self.config,
                tensors: self.tensors,
                fingerprints: self.fingerprints,
                tool_version: TOOL_VERSION.into(),
                payload_sha256: sha256_hex(&self.payload),
            },
            payload: self.payload,
        }
    }
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(8 + manifest.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        if bytes.len() < 8 || &bytes[0..4] != MAGIC {
            return Err(Error::Container("missing TSN1 magic".into()));
        }
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + mlen {
            return Err(Error::Container("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[8..8 + mlen])
            .map_err(|e| Error::Container(format!("manifest parse failed: {e}")))?;
        let payload = bytes[8 + mlen..].to_vec();
        let container = Container { manifest, payload };
        container.validate()?;
        Ok(container)
    }

    pub fn validate(&self) -> Result<()> {
        let plen = self.payload.len() as u64;
        let mut spans: Vec<(u64, u64, &str)> = Vec::new();
        for t in &self.manifest.tensors {
            let expect = (t.shape.iter().product::<usize>() * t.dtype.byte_width()) as u64;
            if t.byte_length != expect {
                return Err(Error::Container(format!(
                    "tensor {} declares {} bytes but shape {:?} needs {expect}",
                    t.name, t.byte_length, t.shape
                )));
            }
            let end = t.byte_offset.checked_add(t.byte_length).ok_or_else(|| {
                Error::Container(format!("tensor {} offset overflow", t.name))
            })?;
            if end > plen {
                return Err(Error::Container(format!(
                    "tensor {} spans {}..{end} beyond payload of {plen} bytes",
                    t.name, t.byte_offset
                )));
            }
            spans.push((t.byte_offset, end, &t.name));
        }
        spans.sort();
        for pair in spans.windows(2) {
            if pair[0].1 > pair[1].0 {
                return Err(Error::Container(format!(
                    "tensors {} and {} overlap",
                    pair[0].2, pair[1].2
                )));
            }
        }
        let got = sha256_hex(&self.payload);
        if got != self.manifest.payload_sha256 {
            return Err(Error::Container(format!(
                "payload checksum mismatch: manifest {}, payload {got}",
                self.manifest.payload_sha256
            )));
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(&bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_from(path: &Path) -> Result<Container> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Container::from_bytes(&bytes)
    }

    fn entry(&self, name: &str) -> Result<&TensorEntry> {
        self.manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Container(format!("tensor {name:?} not in container")))
    }

    pub fn tensor_f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let e = self.entry(name)?;
        if e.dtype != Dtype::F32 {
            return Err(Error::Container(format!("tensor {name:?} is not f32")));
        }
        let bytes = &self.payload[e.byte_offset as usize..(e.byte_offset + e.byte_length) as usize];
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((e.shape.clone(), data))
    }

    pub fn tensor_u32(&self, name: &str) -> Result<(Vec<usize>, Vec<u32>)> {
        let e = self.entry(name)?;
        if e.dtype != Dtype::U32 {
            return Err(Error::Container(format!("tensor {name:?} is not u32")));
        }
        let bytes = &self.payload[e.byte_offset as usize..(e.byte_offset + e.byte_length) as usize];
        let data = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((e.shape.clone(), data))
    }

    pub fn expect_kind(&self, kind: ArtifactKind) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(Error::Container(format!(
                "expected a {kind:?} container, found {:?}",
                self.manifest.kind
            )));
        }
        Ok(())
    }
}

// ── Checkpoint codec ─────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    meta: CheckpointMeta,
}

/// Serialize at storage precision (f32), whatever the in-memory scalar.
pub fn checkpoint_to_container<S: Scalar>(ckpt: &ModelCheckpoint<S>) -> Result<Container> {
    let config = serde_json::to_value(CheckpointConfig {
        model: ckpt.config.clone(),
        meta: ckpt.meta.clone(),
    })?;
    let mut b = ContainerBuilder::new(ArtifactKind::Checkpoint, config);
    let f32s = |t: &Tensor<S>| t.data().iter().map(|v| v.as_f64() as f32).collect::<Vec<_>>();
    b.push_f32("embed", ckpt.embed.shape().to_vec(), f32s(&ckpt.embed).into_iter());
    for (i, layer) in ckpt.layers.iter().enumerate() {
        b.push_f32(
            &format!("layers.{i}.attn_norm"),
            vec![layer.attn_norm.len()],
            layer.attn_norm.iter().map(|v| v.as_f64() as f32),
        );
        for kind in MatrixKind::ALL {
            let m = layer.matrix(kind);
            b.push_f32(
                &MatrixId::new(i, kind).name(),
                m.shape().to_vec(),
                f32s(m).into_iter(),
            );
        }
        b.push_f32(
            &format!("layers.{i}.mlp_norm"),
            vec![layer.mlp_norm.len()],
            layer.mlp_norm.iter().map(|v| v.as_f64() as f32),
        );
    }
    b.push_f32(
        "final_norm",
        vec![ckpt.final_norm.len()],
        ckpt.final_norm.iter().map(|v| v.as_f64() as f32),
    );
    b.push_f32("head", ckpt.head.shape().to_vec(), f32s(&ckpt.head).into_iter());
    Ok(b
        .fingerprint("checkpoint", ckpt.cast::<f32>().fingerprint())
        .build())
}

pub fn checkpoint_from_container(c: &Container) -> Result<ModelCheckpoint<f32>> {
    c.expect_kind(ArtifactKind::Checkpoint)?;
    let cfg: CheckpointConfig = serde_json::from_value(c.manifest.config.clone())?;
    let tensor = |name: &str| -> Result<Tensor<f32>> {
        let (shape, data) = c.tensor_f32(name)?;
        Tensor::new(shape, data)
    };
    let vecf = |name: &str| -> Result<Vec<f32>> { Ok(c.tensor_f32(name)?.1) };
    let mut layers = Vec::with_capacity(cfg.model.n_layers);
    for i in 0..cfg.model.n_layers {
        layers.push(LayerWeights {
            attn_norm: vecf(&format!("layers.{i}.attn_norm"))?,
            w_q: tensor(&MatrixId::new(i, MatrixKind::Q).name())?,
            w_k: tensor(&MatrixId::new(i, MatrixKind::K).name())?,
            w_v: tensor(&MatrixId::new(i, MatrixKind::V).name())?,
            w_o: tensor(&MatrixId::new(i, MatrixKind::O).name())?,
            mlp_norm: vecf(&format!("layers.{i}.mlp_norm"))?,
            w_gate: tensor(&MatrixId::new(i, MatrixKind::Gate).name())?,
            w_up: tensor(&MatrixId::new(i, MatrixKind::Up).name())?,
            w_down: tensor(&MatrixId::new(i, MatrixKind::Down).name())?,
        });
    }
    let ckpt = ModelCheckpoint {
        config: cfg.model,
        embed: tensor("embed")?,
        layers,
        final_norm: vecf("final_norm")?,
        head: tensor("head")?,
        meta: cfg.meta,
    };
    ckpt.validate()?;
    if let Some(expected) = c.manifest.fingerprints.get("checkpoint") {
        let got = ckpt.fingerprint();
        if &got != expected {
            return Err(Error::FingerprintMismatch {
                what: "checkpoint container",
                expected: expected.clone(),
                got,
            });
        }
    }
    Ok(ckpt)
}

// ── Sensitivity codec ────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct SensitivityConfig {
    n_layers: usize,
    n_samples: usize,
    loss_mode: LossMode,
    dataset_fingerprint: String,
}

/// Sensitivity payloads are stored as raw f32 arrays (storage precision);
/// in-memory accumulation stays f64.
pub fn sensitivity_to_container(map: &SensitivityMap) -> Result<Container> {
    let config = serde_json::to_value(SensitivityConfig {
        n_layers: map.matrices.n_layers(),
        n_samples: map.n_samples,
        loss_mode: map.loss_mode,
        dataset_fingerprint: map.dataset_fingerprint.clone(),
    })?;
    let mut b = ContainerBuilder::new(ArtifactKind::Sensitivity, config);
    for (id, t) in map.matrices.iter() {
        b.push_f32(
            &id.name(),
            t.shape().to_vec(),
            t.data().iter().map(|&v| v as f32),
        );
    }
    Ok(b
        .fingerprint("dataset", map.dataset_fingerprint.clone())
        .build())
}

pub fn sensitivity_from_container(c: &Container) -> Result<SensitivityMap> {
    c.expect_kind(ArtifactKind::Sensitivity)?;
    let cfg: SensitivityConfig = serde_json::from_value(c.manifest.config.clone())?;
    let mut maps = Vec::new();
    for layer in 0..cfg.n_layers {
        for kind in MatrixKind::ALL {
            let (shape, data) = c.tensor_f32(&MatrixId::new(layer, kind).name())?;
            maps.push(Tensor::<f64>::new(
                shape,
                data.into_iter().map(f64::from).collect(),
            )?);
        }
    }
    let mut it = maps.into_iter();
    let map = SensitivityMap {
        matrices: PerMatrix::from_fn(cfg.n_layers, |_| it.next().unwrap()),
        n_samples: cfg.n_samples,
        loss_mode: cfg.loss_mode,
        dataset_fingerprint: cfg.dataset_fingerprint,
    };
    map.validate_nonnegative()?;
    Ok(map)
}

// ── Mask codec ───────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct MaskMatrixMeta {
    name: String,
    rows: usize,
    cols: usize,
    budget: usize,
    popcount: usize,
}

#[derive(Serialize, Deserialize)]
struct MaskConfig {
    n_layers: usize,
    kappa: f64,
    provenance: MaskProvenance,
    source: MaskSource,
    matrices: Vec<MaskMatrixMeta>,
}

pub fn mask_to_container(mask: &SparsityMask) -> Result<Container> {
    let matrices = mask
        .matrices
        .iter()
        .map(|(id, m)| MaskMatrixMeta {
            name: id.name(),
            rows: m.rows,
            cols: m.cols,
            budget: m.budget,
            popcount: m.popcount(),
        })
        .collect();
    let config = serde_json::to_value(MaskConfig {
        n_layers: mask.matrices.n_layers(),
        kappa: mask.kappa,
        provenance: mask.provenance,
        source: mask.source.clone(),
        matrices,
    })?;
    let mut b = ContainerBuilder::new(ArtifactKind::Mask, config);
    for (id, m) in mask.matrices.iter() {
        b.push_u32(
            &format!("{}.indices", id.name()),
            vec![m.indices.len()],
            m.indices.iter().copied(),
        );
    }
    Ok(b.fingerprint("mask", mask.fingerprint()).build())
}

pub fn mask_from_container(c: &Container) -> Result<SparsityMask> {
    c.expect_kind(ArtifactKind::Mask)?;
    let cfg: MaskConfig = serde_json::from_value(c.manifest.config.clone())?;
    let mut mats = Vec::new();
    for layer in 0..cfg.n_layers {
        for kind in MatrixKind::ALL {
            let id = MatrixId::new(layer, kind);
            let meta = cfg
                .matrices
                .iter()
                .find(|m| m.name == id.name())
                .ok_or_else(|| Error::Container(format!("mask metadata missing {id}")))?;
            let (_, indices) = c.tensor_u32(&format!("{}.indices", id.name()))?;
            if indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Container(format!(
                    "mask indices of {id} are not strictly sorted"
                )));
            }
            if let Some(&max) = indices.last() {
                if max as usize >= meta.rows * meta.cols {
                    return Err(Error::IndexOutOfRange {
                        what: "mask index",
                        index: max as usize,
                        limit: meta.rows * meta.cols,
                    });
                }
            }
            mats.push(MaskMatrix {
                rows: meta.rows,
                cols: meta.cols,
                budget: meta.budget,
                indices,
            });
        }
    }
    let mut it = mats.into_iter();
    let mask = SparsityMask {
        matrices: PerMatrix::from_fn(cfg.n_layers, |_| it.next().unwrap()),
        kappa: cfg.kappa,
        provenance: cfg.provenance,
        source: cfg.source,
    };
    if let Some(expected) = c.manifest.fingerprints.get("mask") {
        let got = mask.fingerprint();
        if &got != expected {
            return Err(Error::FingerprintMismatch {
                what: "mask container",
                expected: expected.clone(),
                got,
            });
        }
    }
    Ok(mask)
}

// ── Perturbation record codec ────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct RecordMatrixMeta {
    name: String,
    replacement: f32,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordConfig {
    n_layers: usize,
    mode: PerturbMode,
    mask_fingerprint: String,
    original_fingerprint: String,
    perturbed_fingerprint: String,
    matrices: Vec<RecordMatrixMeta>,
}

pub fn record_to_container(record: &PerturbationRecord<f32>) -> Result<Container> {
    let matrices = record
        .per_matrix
        .iter()
        .map(|(id, p)| RecordMatrixMeta {
            name: id.name(),
            replacement: p.replacement,
            count: p.count,
        })
        .collect();
    let config = serde_json::to_value(RecordConfig {
        n_layers: record.per_matrix.n_layers(),
        mode: record.mode,
        mask_fingerprint: record.mask_fingerprint.clone(),
        original_fingerprint: record.original_fingerprint.clone(),
        perturbed_fingerprint: record.perturbed_fingerprint.clone(),
        matrices,
    })?;
    let mut b = ContainerBuilder::new(ArtifactKind::Record, config);
    for (id, p) in record.per_matrix.iter() {
        b.push_u32(
            &format!("{}.indices", id.name()),
            vec![p.indices.len()],
            p.indices.iter().copied(),
        );
        b.push_f32(
            &format!("{}.old_values", id.name()),
            vec![p.old_values.len()],
            p.old_values.iter().copied(),
        );
    }
    Ok(b
        .fingerprint("original", record.original_fingerprint.clone())
        .fingerprint("perturbed", record.perturbed_fingerprint.clone())
        .build())
}

pub fn record_from_container(c: &Container) -> Result<PerturbationRecord<f32>> {
    c.expect_kind(ArtifactKind::Record)?;
    let cfg: RecordConfig = serde_json::from_value(c.manifest.config.clone())?;
    let mut mats = Vec::new();
    for layer in 0..cfg.n_layers {
        for kind in MatrixKind::ALL {
            let id = MatrixId::new(layer, kind);
            let meta = cfg
                .matrices
                .iter()
                .find(|m| m.name == id.name())
                .ok_or_else(|| Error::Container(format!("record metadata missing {id}")))?;
            let (_, indices) = c.tensor_u32(&format!("{}.indices", id.name()))?;
            let (_, old_values) = c.tensor_f32(&format!("{}.old_values", id.name()))?;
            if indices.len() != old_values.len() || indices.len() != meta.count {
                return Err(Error::Container(format!(
                    "record arrays of {id} disagree on length"
                )));
            }
            mats.push(MatrixPerturbation {
                indices,
                old_values,
                replacement: meta.replacement,
                count: meta.count,
            });
        }
    }
    let mut it = mats.into_iter();
    Ok(PerturbationRecord {
        per_matrix: PerMatrix::from_fn(cfg.n_layers, |_| it.next().unwrap()),
        mask_fingerprint: cfg.mask_fingerprint,
        mode: cfg.mode,
        original_fingerprint: cfg.original_fingerprint,
        perturbed_fingerprint: cfg.perturbed_fingerprint,
    })
}

/// Self-describing model-config JSON file (also embedded in checkpoints).
pub fn model_config_from_json(text: &str) -> Result<ModelConfig> {
    let cfg: ModelConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn tokenizer_of(c: &Container) -> Result<TokenizerSpec> {
    let cfg: CheckpointConfig = serde_json::from_value(c.manifest.config.clone())?;
    Ok(cfg.model.tokenizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::build_random_mask;
    use crate::model::tiny_test_config;
    use crate::perturb::apply_mean_perturbation;

    #[test]
    fn checkpoint_roundtrip_byte_identical() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 41).unwrap();
        let c1 = checkpoint_to_container(&ckpt).unwrap();
        let bytes1 = c1.to_bytes().unwrap();
        let c2 = Container::from_bytes(&bytes1).unwrap();
        let bytes2 = c2.to_bytes().unwrap();
        assert_eq!(bytes1, bytes2);
        let back = checkpoint_from_container(&c2).unwrap();
        assert_eq!(back.fingerprint(), ckpt.fingerprint());
        assert_eq!(back, ckpt);
    }

    #[test]
    fn payload_bit_flip_detected() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 42).unwrap();
        let mut bytes = checkpoint_to_container(&ckpt).unwrap().to_bytes().unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::Container(msg)) if msg.contains("checksum")
        ));
    }

    #[test]
    fn magic_and_truncation_detected() {
        let ckpt = ModelCheckpoint::<f32>::init(&tiny_test_config(), 43).unwrap();
        let bytes = checkpoint_to_container(&ckpt).unwrap().to_bytes().unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Container::from_bytes(&wrong).is_err());
        assert!(Container::from_bytes(&bytes[..6]).is_err());
    }

    #[test]
    fn sensitivity_roundtrip() {
        let ckpt = ModelCheckpoint::<f64>::init(&tiny_test_config(), 44).unwrap();
        let samples = vec![
            crate::model::Sample::lm(vec![1, 2, 3, 4]),
            crate::model::Sample::lm(vec![9, 4, 4]),
        ];
        let map =
            crate::fisher::estimate_fisher_diag(&ckpt, &samples, LossMode::AllTokens).unwrap();
        let c = sensitivity_to_container(&map).unwrap();
        let bytes = c.to_bytes().unwrap();
        let back = sensitivity_from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.n_samples, map.n_samples);
        assert_eq!(back.loss_mode, map.loss_mode);
        assert_eq!(back.dataset_fingerprint, map.dataset_fingerprint);
        // Values round-trip through f32 storage.
        for (id, t) in map.matrices.iter() {
            for (a, b) in t.data().iter().zip(back.matrices.get(id).data()) {
                assert!((a - b).abs() <= (*a as f32).abs() as f64 * 1e-6 + 1e-12);
            }
        }
    }

    #[test]
    fn mask_roundtrip_exact() {
        let cfg = tiny_test_config();
        let mask = build_random_mask(&cfg, 0.03, 7).unwrap();
        let c = mask_to_container(&mask).unwrap();
        let bytes = c.to_bytes().unwrap();
        let back = mask_from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, mask);
        // Whole-container byte round trip.
        let again = mask_to_container(&back).unwrap().to_bytes().unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn record_roundtrip_supports_bit_exact_revert() {
        let cfg = tiny_test_config();
        let ckpt = ModelCheckpoint::<f32>::init(&cfg, 45).unwrap();
        let mask = build_random_mask(&cfg, 0.02, 8).unwrap();
        let (perturbed, record) = apply_mean_perturbation(&ckpt, &mask).unwrap();
        let bytes = record_to_container(&record).unwrap().to_bytes().unwrap();
        let back = record_from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, record);
        let restored = crate::perturb::revert(&perturbed, &back).unwrap();
        assert_eq!(restored.fingerprint(), ckpt.fingerprint());
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let cfg = tiny_test_config();
        let mask = build_random_mask(&cfg, 0.01, 9).unwrap();
        let c = mask_to_container(&mask).unwrap();
        assert!(checkpoint_from_container(&c).is_err());
    }
}
