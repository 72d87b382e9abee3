//! Word-vector loading and per-class semantic inputs.
//!
//! Files use the GloVe text layout: one `token v1 … vK` record per line,
//! whitespace separated, no header. Class names missing from the
//! vocabulary fall back to a vector seeded by the 64-bit FNV-1a hash of the
//! token, so the pipeline runs without any embedding file.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::rng::fnv1a64;
use crate::numerics::{seeded_init, Init, Matrix, Scalar};

#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl Vocabulary {
    pub fn empty(dim: usize) -> Self {
        Vocabulary {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Format(format!(
                "vector of length {} in a vocabulary of dimension {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    /// Parses GloVe-format text. Duplicate tokens keep the last record.
    pub fn parse(text: &str, expected_dim: usize, source: &str) -> Result<Self> {
        let mut vocab = Vocabulary::empty(expected_dim);
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(|f| f.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: source.to_string(),
                    line: lineno,
                    msg: format!("bad value for token `{token}`: {e}"),
                })?;
            if values.len() != expected_dim {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: lineno,
                    msg: format!("token `{token}` has {} values, expected {expected_dim}", values.len()),
                });
            }
            if vocab.vectors.insert(token.to_string(), values).is_some() {
                log::warn!("{source}:{lineno}: duplicate token `{token}`, keeping the later record");
            }
        }
        Ok(vocab)
    }
}

pub fn load_word_vectors(path: impl AsRef<Path>, expected_dim: usize) -> Result<Vocabulary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    Vocabulary::parse(&text, expected_dim, &path.display().to_string())
}

/// Deterministic stand-in for a token missing from the vocabulary.
pub fn fallback_vector(token: &str, dim: usize) -> Vec<f32> {
    let m: Matrix<f32> =
        seeded_init(1, dim, Init::FanInUniform { fan_in: dim }, fnv1a64(token.as_bytes())).expect("dim is positive");
    m.into_vec()
}

/// Embeds a (possibly multi-word) class name as the mean of its token vectors.
pub fn embed_class(name: &str, vocab: &Vocabulary) -> Vec<f32> {
    let dim = vocab.dim();
    let tokens: Vec<&str> = name.split_whitespace().collect();
    let mut out = vec![0.0f32; dim];
    for token in &tokens {
        match vocab.get(token) {
            Some(v) => out.iter_mut().zip(v).for_each(|(o, &x)| *o += x),
            None => {
                let v = fallback_vector(token, dim);
                out.iter_mut().zip(&v).for_each(|(o, &x)| *o += x);
            }
        }
    }
    let n = tokens.len().max(1) as f32;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// Class names in label order together with their `M × K` embedding matrix.
#[derive(Clone, Debug)]
pub struct ClassVocabulary {
    pub names: Vec<String>,
    pub embeddings: Matrix<f32>,
}

impl ClassVocabulary {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn matrix<T: Scalar>(&self) -> Matrix<T> {
        self.embeddings.cast()
    }
}

pub fn build_semantic_inputs(classes: &[String], vocab: &Vocabulary) -> Result<ClassVocabulary> {
    if classes.is_empty() {
        return Err(Error::Config("class list is empty".into()));
    }
    if vocab.dim() == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut seen = HashSet::new();
    let mut data = Vec::with_capacity(classes.len() * vocab.dim());
    for name in classes {
        if name.trim().is_empty() {
            return Err(Error::Config("empty class name".into()));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::Config(format!("duplicate class name `{name}`")));
        }
        data.extend(embed_class(name, vocab));
    }
    Ok(ClassVocabulary {
        names: classes.to_vec(),
        embeddings: Matrix::from_vec(classes.len(), vocab.dim(), data)?,
    })
}
