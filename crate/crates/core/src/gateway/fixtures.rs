//! Offline fixture stores backing the mock LLM and mock segmenter.
//!
//! On-disk layout of a fixture directory:
//!
//! ```text
//! <dir>/index.json            {"entries": [{"hash", "file", "prompt"}]}
//! <dir>/<prompt_sha256>.txt   canned completion, returned verbatim
//! <dir>/segment/index.json    {"masks": [{"image", "roi", "file"}], "layouts": [{"image", "layout"}]}
//! <dir>/segment/*.png         masks referenced from the segment index
//! ```
//!
//! `image` is either `*` (any image) or an image fingerprint
//! ([`ImageBuffer::fingerprint`]). A session can be recorded by calling
//! [`FixtureStore::insert`] with each prompt/answer pair and then
//! [`MockFixtures::save`].

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, LlmBackend, Segmenter};
use crate::image::{ImageBuffer, RasterMask};
use crate::layout::Layout;

pub const ANY_IMAGE: &str = "*";

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    hash: String,
    file: String,
    prompt: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct LlmIndex {
    entries: Vec<IndexEntry>,
}

/// Content-addressed prompt -> response map. Misses are errors, never guesses.
#[derive(Debug, Clone, Default)]
pub struct FixtureStore {
    responses: BTreeMap<String, (String, String)>,
}

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.responses
            .insert(prompt_hash(prompt), (prompt.to_string(), response.into()));
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn lookup(&self, prompt: &str) -> Result<&str, BackendError> {
        let hash = prompt_hash(prompt);
        match self.responses.get(&hash) {
            Some((_, r)) => Ok(r),
            None => Err(BackendError::MockMiss { hash }),
        }
    }

    /// Reads `index.json` when present, plus any bare `<sha256>.txt` files.
    pub fn load(dir: &Path) -> io::Result<Self> {
        let mut store = FixtureStore::new();
        let index_path = dir.join("index.json");
        let mut prompts = BTreeMap::new();
        if index_path.exists() {
            let index: LlmIndex = serde_json::from_slice(&fs::read(&index_path)?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            for e in index.entries {
                prompts.insert(e.hash, e.prompt);
            }
        }
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let is_hash = stem.len() == 64 && stem.bytes().all(|b| b.is_ascii_hexdigit());
            if is_hash && path.extension().is_some_and(|e| e == "txt") {
                let response = fs::read_to_string(&path)?;
                let prompt = prompts.get(stem).cloned().unwrap_or_default();
                store.responses.insert(stem.to_lowercase(), (prompt, response));
            }
        }
        Ok(store)
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = LlmIndex::default();
        for (hash, (prompt, response)) in &self.responses {
            let file = format!("{hash}.txt");
            fs::write(dir.join(&file), response)?;
            index.entries.push(IndexEntry {
                hash: hash.clone(),
                file,
                prompt: prompt.clone(),
            });
        }
        let json = serde_json::to_vec_pretty(&index).map_err(io::Error::other)?;
        fs::write(dir.join("index.json"), json)
    }
}

impl LlmBackend for FixtureStore {
    fn complete(&self, prompt: &str, _image: Option<&ImageBuffer>) -> Result<String, BackendError> {
        self.lookup(prompt).map(str::to_string)
    }
}

#[derive(Debug, Clone)]
struct MaskFixture {
    image: String,
    roi: String,
    mask: RasterMask,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskIndexEntry {
    image: String,
    roi: String,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayoutFixture {
    image: String,
    layout: Layout,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SegmentIndex {
    #[serde(default)]
    masks: Vec<MaskIndexEntry>,
    #[serde(default)]
    layouts: Vec<LayoutFixture>,
}

fn normalize_roi(roi: &str) -> String {
    roi.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// `(image, text RoI) -> mask` table. Exact-image entries beat wildcards.
#[derive(Debug, Clone, Default)]
pub struct SegmentFixtures {
    masks: Vec<MaskFixture>,
    layouts: Vec<LayoutFixture>,
}

impl SegmentFixtures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_mask(&mut self, image: impl Into<String>, roi: &str, mask: RasterMask) {
        self.masks.push(MaskFixture {
            image: image.into(),
            roi: normalize_roi(roi),
            mask,
        });
    }

    pub fn insert_layout(&mut self, image: impl Into<String>, layout: Layout) {
        self.layouts.push(LayoutFixture {
            image: image.into(),
            layout,
        });
    }

    fn pick<'a, T>(
        items: &'a [T],
        image_of: impl Fn(&T) -> &str,
        fp: &str,
        pred: impl Fn(&T) -> bool,
    ) -> Option<&'a T> {
        items
            .iter()
            .filter(|t| pred(t) && image_of(t) == fp)
            .chain(items.iter().filter(|t| pred(t) && image_of(t) == ANY_IMAGE))
            .next()
    }

    pub fn load(dir: &Path) -> io::Result<Self> {
        let index_path = dir.join("index.json");
        if !index_path.exists() {
            return Ok(Self::default());
        }
        let index: SegmentIndex = serde_json::from_slice(&fs::read(&index_path)?)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let mut out = SegmentFixtures {
            masks: Vec::new(),
            layouts: index.layouts,
        };
        for e in index.masks {
            let mask = RasterMask::load(&dir.join(&e.file))
                .map_err(|err| io::Error::new(io::ErrorKind::InvalidData, err.to_string()))?;
            out.insert_mask(e.image, &e.roi, mask);
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = SegmentIndex {
            masks: Vec::new(),
            layouts: self.layouts.clone(),
        };
        for (i, m) in self.masks.iter().enumerate() {
            let file = format!("mask_{i:03}.png");
            m.mask
                .save(&dir.join(&file))
                .map_err(|e| io::Error::other(e.to_string()))?;
            index.masks.push(MaskIndexEntry {
                image: m.image.clone(),
                roi: m.roi.clone(),
                file,
            });
        }
        let json = serde_json::to_vec_pretty(&index).map_err(io::Error::other)?;
        fs::write(dir.join("index.json"), json)
    }
}

impl Segmenter for SegmentFixtures {
    fn segment(&self, image: &ImageBuffer, text_roi: &str) -> Result<RasterMask, BackendError> {
        let fp = image.fingerprint();
        let roi = normalize_roi(text_roi);
        Self::pick(&self.masks, |m| &m.image, &fp, |m| m.roi == roi)
            .map(|m| m.mask.clone())
            .ok_or_else(|| BackendError::RoiNotFound(text_roi.to_string()))
    }

    fn enumerate(&self, image: &ImageBuffer) -> Result<Layout, BackendError> {
        let fp = image.fingerprint();
        Ok(Self::pick(&self.layouts, |l| &l.image, &fp, |_| true)
            .map(|l| l.layout.clone())
            .unwrap_or_default())
    }
}

/// Everything the in-process mocks need.
#[derive(Debug, Clone, Default)]
pub struct MockFixtures {
    pub llm: FixtureStore,
    pub segment: SegmentFixtures,
}

impl MockFixtures {
    pub fn load(dir: &Path) -> io::Result<Self> {
        let segment_dir = dir.join("segment");
        Ok(MockFixtures {
            llm: FixtureStore::load(dir)?,
            segment: if segment_dir.is_dir() {
                SegmentFixtures::load(&segment_dir)?
            } else {
                SegmentFixtures::default()
            },
        })
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        self.llm.save(dir)?;
        self.segment.save(&dir.join("segment"))
    }
}
