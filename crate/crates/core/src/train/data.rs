use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MANIFEST_HEADER: &str = "clear,hazy,A,beta,depth_kind";

/// Top-left corner of a `crop x crop` window, uniform over every valid position.
pub fn random_corner(h: usize, w: usize, crop: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if crop == 0 || h < crop || w < crop {
        return Err(Error::argument(format!("cannot take a {crop}x{crop} crop from {h}x{w}")));
    }
    Ok((rng.random_range(0..=h - crop), rng.random_range(0..=w - crop)))
}

pub fn crop_at(image: &Tensor, top: usize, left: usize, crop: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.rank() != 4 || top + crop > s.h() || left + crop > s.w() {
        return Err(Error::argument(format!(
            "crop {crop}x{crop} at ({top}, {left}) falls outside {s}"
        )));
    }
    Ok(Tensor::from_fn(Shape::new(s.n(), s.c(), crop, crop), |n, c, y, x| {
        image.get(n, c, top + y, left + x)
    }))
}

pub fn random_crop(image: &Tensor, crop: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let s = image.shape();
    let (top, left) = random_corner(s.h(), s.w(), crop, rng)?;
    crop_at(image, top, left, crop)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// A clear image and every hazy image synthesized from it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub clear: PathBuf,
    pub hazy: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<DatasetEntry>,
    pub split: Option<Split>,
}

/// One row of a synthesis manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub clear: String,
    pub hazy: String,
    pub atmosphere: f64,
    pub beta: f64,
    pub depth_kind: String,
}

impl ManifestRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.clear, self.hazy, self.atmosphere, self.beta, self.depth_kind
        )
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == MANIFEST_HEADER => {}
        _ => return Err(Error::format(0, format!("manifest must start with {MANIFEST_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    let mut offset = text.lines().next().map_or(0, |l| l.len() + 1);
    for (_, line) in lines {
        let at = offset as u64;
        offset += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::format(at, format!("expected 5 fields, found {}", fields.len())));
        }
        let number = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::format(at, format!("bad {what} value {s:?}")))
        };
        rows.push(ManifestRow {
            clear: fields[0].to_string(),
            hazy: fields[1].to_string(),
            atmosphere: number(fields[2], "A")?,
            beta: number(fields[3], "beta")?,
            depth_kind: fields[4].to_string(),
        });
    }
    Ok(rows)
}

impl DatasetIndex {
    /// Groups manifest rows by clear image, in order of first appearance,
    /// resolving relative paths against `base`.
    pub fn from_rows(rows: &[ManifestRow], base: &Path) -> Self {
        let mut entries: Vec<DatasetEntry> = Vec::new();
        for row in rows {
            let clear = base.join(&row.clear);
            let hazy = base.join(&row.hazy);
            match entries.iter_mut().find(|e| e.clear == clear) {
                Some(entry) => entry.hazy.push(hazy),
                None => entries.push(DatasetEntry { clear, hazy: vec![hazy] }),
            }
        }
        DatasetIndex { entries, split: None }
    }

    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = parse_manifest(&text).map_err(|e| e.in_file(path))?;
        Ok(Self::from_rows(&rows, path.parent().unwrap_or(Path::new("."))))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every (clear, hazy) pair in index order.
    pub fn pairs(&self) -> Vec<(&Path, &Path)> {
        self.entries
            .iter()
            .flat_map(|e| e.hazy.iter().map(move |h| (e.clear.as_path(), h.as_path())))
            .collect()
    }
}

/// Splits at the clear-image level so hazy variants always stay with their
/// source. The test side gets `round(n * test_fraction)` images, leaving at
/// least one for training.
pub fn split_dataset(index: &DatasetIndex, test_fraction: f64, seed: u64) -> Result<(DatasetIndex, DatasetIndex)> {
    if index.is_empty() {
        return Err(Error::argument("cannot split an empty dataset"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::argument(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let n = index.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let pick = |want: bool, split: Split| DatasetIndex {
        entries: index
            .entries
            .iter()
            .zip(&is_test)
            .filter(|(_, &t)| t == want)
            .map(|(e, _)| e.clone())
            .collect(),
        split: Some(split),
    };
    Ok((pick(false, Split::Train), pick(true, Split::Test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn index(n: usize, variants: usize) -> DatasetIndex {
        DatasetIndex {
            entries: (0..n)
                .map(|i| DatasetEntry {
                    clear: PathBuf::from(format!("clear/{i}.ppm")),
                    hazy: (0..variants).map(|v| PathBuf::from(format!("hazy/{i}_{v}.ppm"))).collect(),
                })
                .collect(),
            split: None,
        }
    }

    #[test]
    fn full_size_crop_is_whole_image() {
        let img = Tensor::from_fn(Shape::new(1, 3, 6, 6), |_, c, y, x| (c + y * 6 + x) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_crop(&img, 6, &mut rng).unwrap(), img);
        assert!(random_crop(&img, 7, &mut rng).is_err());
    }

    #[test]
    fn crop_is_a_sub_array() {
        let img = Tensor::from_fn(Shape::new(1, 3, 9, 11), |_, c, y, x| (c * 1000 + y * 20 + x) as f64);
        let crop = crop_at(&img, 2, 5, 4).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(crop.get(0, c, y, x), img.get(0, c, y + 2, x + 5));
                }
            }
        }
    }

    #[test]
    fn corners_follow_the_seed() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| random_corner(50, 40, 8, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
        assert!(draw(5).iter().all(|&(y, x)| y <= 42 && x <= 32));
    }

    #[test]
    fn split_counts_and_determinism() {
        let idx = index(10, 3);
        let (train, test) = split_dataset(&idx, 0.2, 7).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!((train.split, test.split), (Some(Split::Train), Some(Split::Test)));
        assert_eq!(split_dataset(&idx, 0.2, 7).unwrap(), (train, test));
        assert!(split_dataset(&DatasetIndex::default(), 0.2, 0).is_err());
        assert!(split_dataset(&idx, 1.0, 0).is_err());
    }

    #[test]
    fn manifest_parsing_groups_variants() {
        let text = format!(
            "{MANIFEST_HEADER}\nclear/a.ppm,hazy/a_0.ppm,0.8,0.5,ramp\nclear/a.ppm,hazy/a_1.ppm,0.8,1,ramp\nclear/b.ppm,hazy/b_0.ppm,1,2,ramp\n"
        );
        let rows = parse_manifest(&text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].to_csv(), "clear/a.ppm,hazy/a_1.ppm,0.8,1,ramp");
        let idx = DatasetIndex::from_rows(&rows, Path::new("/data"));
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.entries[0].hazy.len(), 2);
        assert_eq!(idx.entries[1].clear, PathBuf::from("/data/clear/b.ppm"));
        assert_eq!(idx.pairs().len(), 3);
        let bad = format!("{MANIFEST_HEADER}\na,b,0.8\n");
        let header_len = MANIFEST_HEADER.len() as u64 + 1;
        assert!(matches!(parse_manifest(&bad), Err(Error::Format { offset, .. }) if offset == header_len));
        assert!(parse_manifest("clear,hazy\n").is_err());
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_variant_closed(n in 1usize..30, frac in 0.01f64..0.99, seed: u64) {
            let idx = index(n, 4);
            let (train, test) = split_dataset(&idx, frac, seed).unwrap();
            prop_assert!(!train.is_empty());
            prop_assert_eq!(train.len() + test.len(), n);
            let clear_train: HashSet<_> = train.entries.iter().map(|e| e.clear.clone()).collect();
            let hazy_train: HashSet<_> = train.entries.iter().flat_map(|e| e.hazy.clone()).collect();
            for e in &test.entries {
                prop_assert!(!clear_train.contains(&e.clear));
                prop_assert!(e.hazy.iter().all(|h| !hazy_train.contains(h)));
            }
            for e in train.entries.iter().chain(&test.entries) {
                prop_assert!(idx.entries.contains(e));
            }
        }
    }
}
