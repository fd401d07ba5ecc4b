//! The twelve architecture variants and their declarative specs.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Positional-embedding alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosEmb {
    Absolute,
    Rope,
    None,
    /// One mixer block prepended before layer 0 acts as the positional
    /// embedder.
    MambaPrefix,
}

/// Feed-forward alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FfnKind {
    GeluMlp,
    Swiglu,
    MambaMixer,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    Layer,
    Rms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    Mha,
    None,
}

/// Sub-block combination of one variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub pos_emb: PosEmb,
    pub ffn: FfnKind,
    pub norm: NormKind,
    pub attention: AttentionKind,
}

/// Variant ids 1 .. 3 with their dotted hybrids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantId {
    #[serde(rename = "1")]
    V1,
    #[serde(rename = "1.1")]
    V1_1,
    #[serde(rename = "1.2")]
    V1_2,
    #[serde(rename = "1.3")]
    V1_3,
    #[serde(rename = "1.4")]
    V1_4,
    #[serde(rename = "1.5")]
    V1_5,
    #[serde(rename = "1.6")]
    V1_6,
    #[serde(rename = "2")]
    V2,
    #[serde(rename = "2.1")]
    V2_1,
    #[serde(rename = "2.2")]
    V2_2,
    #[serde(rename = "2.3")]
    V2_3,
    #[serde(rename = "3")]
    V3,
}

impl VariantId {
    pub const ALL: [VariantId; 12] = [
        VariantId::V1,
        VariantId::V1_1,
        VariantId::V1_2,
        VariantId::V1_3,
        VariantId::V1_4,
        VariantId::V1_5,
        VariantId::V1_6,
        VariantId::V2,
        VariantId::V2_1,
        VariantId::V2_2,
        VariantId::V2_3,
        VariantId::V3,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantId::V1 => "1",
            VariantId::V1_1 => "1.1",
            VariantId::V1_2 => "1.2",
            VariantId::V1_3 => "1.3",
            VariantId::V1_4 => "1.4",
            VariantId::V1_5 => "1.5",
            VariantId::V1_6 => "1.6",
            VariantId::V2 => "2",
            VariantId::V2_1 => "2.1",
            VariantId::V2_2 => "2.2",
            VariantId::V2_3 => "2.3",
            VariantId::V3 => "3",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            VariantId::V1 => "GPT-2",
            VariantId::V1_1 => "GPT-2 RMS",
            VariantId::V1_2 => "GPT-2 RoPE",
            VariantId::V1_3 => "GPT-2 SwiGLU",
            VariantId::V1_4 => "GPT-2 RMS SwiGLU",
            VariantId::V1_5 => "GPT-2 RMS RoPE",
            VariantId::V1_6 => "GPT-2 RoPE SwiGLU",
            VariantId::V2 => "Llama",
            VariantId::V2_1 => "Llama RoPE-less",
            VariantId::V2_2 => "Llama SwiGLU-less",
            VariantId::V2_3 => "Llama RoPE,SwiGLU-less",
            VariantId::V3 => "Mamba",
        }
    }

    /// The fixed sub-block combination of this variant.
    pub fn components(&self) -> Components {
        use AttentionKind as A;
        use FfnKind as F;
        use NormKind as N;
        use PosEmb as P;
        let (pos_emb, ffn, norm, attention) = match self {
            VariantId::V1 => (P::Absolute, F::GeluMlp, N::Layer, A::Mha),
            VariantId::V1_1 => (P::Absolute, F::GeluMlp, N::Rms, A::Mha),
            VariantId::V1_2 => (P::Rope, F::GeluMlp, N::Layer, A::Mha),
            VariantId::V1_3 => (P::Absolute, F::Swiglu, N::Layer, A::Mha),
            VariantId::V1_4 => (P::Absolute, F::Swiglu, N::Rms, A::Mha),
            VariantId::V1_5 => (P::Rope, F::GeluMlp, N::Rms, A::Mha),
            VariantId::V1_6 => (P::Rope, F::Swiglu, N::Layer, A::Mha),
            VariantId::V2 => (P::Rope, F::Swiglu, N::Rms, A::Mha),
            VariantId::V2_1 => (P::MambaPrefix, F::Swiglu, N::Rms, A::Mha),
            VariantId::V2_2 => (P::Rope, F::MambaMixer, N::Rms, A::Mha),
            VariantId::V2_3 => (P::MambaPrefix, F::MambaMixer, N::Rms, A::Mha),
            VariantId::V3 => (P::None, F::MambaMixer, N::Rms, A::None),
        };
        Components {
            pos_emb,
            ffn,
            norm,
            attention,
        }
    }
}

impl std::fmt::Display for VariantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VariantId {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        VariantId::ALL
            .iter()
            .find(|v| v.as_str() == s)
            .copied()
            .ok_or_else(|| {
                CoreError::InvalidArgument(format!(
                    "unknown variant '{s}'; expected one of 1, 1.1 .. 1.6, 2, 2.1 .. 2.3, 3"
                ))
            })
    }
}

/// Declarative description of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub variant: VariantId,
    /// Transformer-equivalent depth.
    pub n_layers: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub task_input_dim: usize,
    pub output_dim: usize,
    /// Longest token sequence the model accepts; sizes the absolute table.
    pub max_seq_len: usize,
    /// Mixer blocks per transformer-equivalent layer in the pure-Mamba
    /// variant. With expand 4 one mixer already matches an attention+FFN
    /// pair, so the default is 1.
    pub mamba_layer_multiplier: usize,
}

impl ArchitectureSpec {
    pub fn new(variant: VariantId, n_layers: usize, embed_dim: usize, n_heads: usize) -> Self {
        ArchitectureSpec {
            variant,
            n_layers,
            embed_dim,
            n_heads,
            task_input_dim: 20,
            output_dim: 1,
            max_seq_len: 2 * 101,
            mamba_layer_multiplier: 1,
        }
    }

    /// Number of residual blocks stacked for the pure-Mamba variant.
    pub fn mamba_stack_depth(&self) -> usize {
        self.n_layers * self.mamba_layer_multiplier
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(CoreError::InvalidArgument("n_layers must be positive".into()));
        }
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.output_dim > self.task_input_dim {
            return Err(CoreError::InvalidArgument(format!(
                "output_dim {} exceeds task_input_dim {}: y tokens cannot be embedded",
                self.output_dim, self.task_input_dim
            )));
        }
        let c = self.variant.components();
        if c.pos_emb == PosEmb::Rope && (self.embed_dim / self.n_heads) % 2 != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "RoPE needs an even head dim, got {}",
                self.embed_dim / self.n_heads
            )));
        }
        if self.mamba_layer_multiplier == 0 {
            return Err(CoreError::InvalidArgument(
                "mamba_layer_multiplier must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_variants_with_unique_component_combinations() {
        assert_eq!(VariantId::ALL.len(), 12);
        let mut combos: Vec<Components> = VariantId::ALL.iter().map(|v| v.components()).collect();
        combos.sort_by_key(|c| format!("{c:?}"));
        combos.dedup();
        assert_eq!(combos.len(), 12, "component mapping must be a bijection");
    }

    #[test]
    fn base_model_components_match_their_descriptions() {
        let v1 = VariantId::V1.components();
        assert_eq!(
            (v1.pos_emb, v1.ffn, v1.norm, v1.attention),
            (PosEmb::Absolute, FfnKind::GeluMlp, NormKind::Layer, AttentionKind::Mha)
        );
        let v2 = VariantId::V2.components();
        assert_eq!(
            (v2.pos_emb, v2.ffn, v2.norm, v2.attention),
            (PosEmb::Rope, FfnKind::Swiglu, NormKind::Rms, AttentionKind::Mha)
        );
        let v3 = VariantId::V3.components();
        assert_eq!(
            (v3.pos_emb, v3.ffn, v3.norm, v3.attention),
            (PosEmb::None, FfnKind::MambaMixer, NormKind::Rms, AttentionKind::None)
        );
    }

    #[test]
    fn variant_ids_round_trip_through_strings() {
        for v in VariantId::ALL {
            let parsed: VariantId = v.as_str().parse().unwrap();
            assert_eq!(parsed, v);
        }
        assert!("7".parse::<VariantId>().is_err());
    }

    #[test]
    fn rope_variant_rejects_odd_head_dim() {
        let mut spec = ArchitectureSpec::new(VariantId::V2, 2, 6, 2);
        assert!(spec.validate().is_err()); // head dim 3
        spec.embed_dim = 8;
        assert!(spec.validate().is_ok());
    }
}
