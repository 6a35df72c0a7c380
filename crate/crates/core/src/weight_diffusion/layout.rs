use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::field_mlp::FieldMlpConfig;

/// Split of a flat weight vector into consecutive tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TokenLayout {
    lengths: Vec<usize>,
    offsets: Vec<usize>,
}

impl TokenLayout {
    pub fn new(lengths: Vec<usize>) -> Result<Self, DiffusionError> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(DiffusionError::InvalidConfig(
                "token lengths must be non-empty and positive".into(),
            ));
        }
        let offsets = lengths
            .iter()
            .scan(0, |acc, &l| {
                let start = *acc;
                *acc += l;
                Some(start)
            })
            .collect();
        Ok(Self { lengths, offsets })
    }

    /// Two tokens per layer: the weight matrix, then the bias.
    pub fn for_field(config: &FieldMlpConfig) -> Self {
        let lengths = config
            .layer_dims()
            .windows(2)
            .flat_map(|w| [w[0] * w[1], w[1]])
            .collect();
        Self::new(lengths).expect("field layers are non-empty")
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// `(offset, length)` of token `i`.
    pub fn span(&self, i: usize) -> (usize, usize) {
        (self.offsets[i], self.lengths[i])
    }

    /// Total flat length `h`.
    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn tokenize<'v>(&self, v: &'v [f32]) -> Result<Vec<&'v [f32]>, DiffusionError> {
        if v.len() != self.total() {
            return Err(DiffusionError::LengthMismatch {
                expected: self.total(),
                actual: v.len(),
            });
        }
        Ok((0..self.len())
            .map(|i| {
                let (o, l) = self.span(i);
                &v[o..o + l]
            })
            .collect())
    }

    pub fn detokenize(&self, tokens: &[&[f32]]) -> Result<Vec<f32>, DiffusionError> {
        if tokens.len() != self.len()
            || tokens.iter().zip(&self.lengths).any(|(t, &l)| t.len() != l)
        {
            return Err(DiffusionError::InvalidConfig(
                "tokens do not match the layout".into(),
            ));
        }
        Ok(tokens.concat())
    }
}

impl TryFrom<Vec<usize>> for TokenLayout {
    type Error = DiffusionError;
    fn try_from(lengths: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(lengths)
    }
}

impl From<TokenLayout> for Vec<usize> {
    fn from(layout: TokenLayout) -> Self {
        layout.lengths
    }
}

impl Default for TokenLayout {
    fn default() -> Self {
        Self::for_field(&FieldMlpConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_field_layout() {
        let layout = TokenLayout::default();
        assert_eq!(
            layout.lengths(),
            &[3072, 128, 16384, 128, 16384, 128, 128, 1]
        );
        assert_eq!(layout.total(), 36_353);
        assert_eq!(layout.span(2), (3200, 16384));
    }

    #[test]
    fn tokenize_roundtrip() {
        let layout = TokenLayout::new(vec![3, 1, 2]).unwrap();
        let v: Vec<f32> = (0..6).map(|i| i as f32).collect();
        let tokens = layout.tokenize(&v).unwrap();
        assert_eq!(tokens[1], &[3.0]);
        assert_eq!(layout.detokenize(&tokens).unwrap(), v);
        assert!(layout.tokenize(&v[..5]).is_err());
    }

    #[test]
    fn serde_as_length_list() {
        let layout = TokenLayout::new(vec![4, 2]).unwrap();
        let json = serde_json::to_string(&layout).unwrap();
        assert_eq!(json, "[4,2]");
        assert_eq!(serde_json::from_str::<TokenLayout>(&json).unwrap(), layout);
        assert!(serde_json::from_str::<TokenLayout>("[0]").is_err());
    }
}
