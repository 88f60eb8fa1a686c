use std::path::Path;

use crate::data::{LabeledSet, Split, Task, TaskSchedule};
use crate::error::{Error, IdxErrorKind, Result};
use crate::models::OutputKind;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images in `[-1, 1]` as rows of `height · width`, with raw byte labels.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxSet<S> {
    pub images: Tensor<S>,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, kind: IdxErrorKind) -> Error {
        Error::Idx {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            kind,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(
                self.pos,
                IdxErrorKind::Truncated {
                    needed: self.pos as u64 + n as u64,
                    available: self.bytes.len() as u64,
                },
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(self.fail(0, IdxErrorKind::BadMagic { expected, found }));
        }
        Ok(())
    }
}

/// Parses an IDX label file. `path` is only used in error messages.
pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader {
        path,
        bytes,
        pos: 0,
    };
    r.magic(LABELS_MAGIC)?;
    let n = r.u32()? as usize;
    Ok(r.take(n)?.to_vec())
}

/// Parses an IDX image file into rows scaled linearly from `[0, 255]` to
/// `[-1, 1]`. Returns `(images, rows, cols)`.
pub fn parse_idx_images<S: Scalar>(
    path: &Path,
    bytes: &[u8],
) -> Result<(Vec<S>, usize, usize, usize)> {
    let mut r = Reader {
        path,
        bytes,
        pos: 0,
    };
    r.magic(IMAGES_MAGIC)?;
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let total = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| {
            r.fail(
                16,
                IdxErrorKind::Truncated {
                    needed: u64::MAX,
                    available: bytes.len() as u64,
                },
            )
        })?;
    let pixels = r.take(total)?;
    let data = pixels
        .iter()
        .map(|&p| S::lit(p as f64 / 127.5 - 1.0))
        .collect();
    Ok((data, n, rows, cols))
}

/// Nearest-neighbour resize of row-major `[h, w]` images; target pixel
/// `(r, c)` copies source `(r·h/th, c·w/tw)` (integer division).
pub fn resize_nearest<S: Scalar>(src: &[S], h: usize, w: usize, th: usize, tw: usize) -> Vec<S> {
    let n = src.len() / (h * w);
    let mut out = Vec::with_capacity(n * th * tw);
    for img in src.chunks(h * w) {
        for r in 0..th {
            let sr = r * h / th;
            for c in 0..tw {
                out.push(img[sr * w + c * w / tw]);
            }
        }
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label file pair, optionally resizing to `(height, width)`.
pub fn load_idx<S: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    resize: Option<(usize, usize)>,
) -> Result<IdxSet<S>> {
    let (mut data, n, mut h, mut w) = parse_idx_images::<S>(images_path, &read(images_path)?)?;
    let labels = parse_idx_labels(labels_path, &read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            offset: 4,
            kind: IdxErrorKind::CountMismatch {
                images: n as u32,
                labels: labels.len() as u32,
            },
        });
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::EmptyBatch { what: "IDX images" });
    }
    if let Some((th, tw)) = resize {
        if (th, tw) != (h, w) {
            data = resize_nearest(&data, h, w, th, tw);
            (h, w) = (th, tw);
        }
    }
    Ok(IdxSet {
        images: Tensor::matrix(n, h * w, data)?,
        height: h,
        width: w,
        labels,
    })
}

/// One task per category; category `c` takes the samples with raw label
/// `c − 1`.
pub fn tasks_from_idx<S: Scalar>(
    train: &IdxSet<S>,
    test: &IdxSet<S>,
    categories: usize,
) -> Result<TaskSchedule<S>> {
    if (train.height, train.width) != (test.height, test.width) {
        return Err(Error::InvalidArgument(
            "train and test image sizes differ".into(),
        ));
    }
    let split = |set: &IdxSet<S>, c: usize, split| {
        let idx: Vec<usize> = (0..set.labels.len())
            .filter(|&i| set.labels[i] as usize + 1 == c)
            .collect();
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no samples with label {} in {:?} split",
                c - 1,
                split
            )));
        }
        LabeledSet::new(set.images.select_rows(&idx), vec![c; idx.len()], split)
    };
    let tasks = (1..=categories)
        .map(|c| {
            Ok(Task {
                category: c,
                train: split(train, c, Split::Train)?,
                test: split(test, c, Split::Test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSchedule::from_tasks(
        tasks,
        OutputKind::Image {
            height: train.height,
            width: train.width,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_file(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(pixels);
        b
    }

    #[test]
    fn label_fixture() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 2, 3, 7];
        assert_eq!(
            parse_idx_labels(Path::new("l"), &bytes).unwrap(),
            vec![3, 7]
        );
    }

    #[test]
    fn pixel_endpoints() {
        let bytes = images_file(1, 1, 2, &[0, 255]);
        let (d, n, r, c) = parse_idx_images::<f64>(Path::new("i"), &bytes).unwrap();
        assert_eq!((n, r, c), (1, 1, 2));
        assert_eq!(d, vec![-1.0, 1.0]);
    }

    #[test]
    fn wrong_magic_in_image_slot() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 0];
        let err = parse_idx_images::<f64>(Path::new("imgs"), &bytes).unwrap_err();
        match err {
            Error::Idx { path, offset, kind } => {
                assert_eq!(path, Path::new("imgs"));
                assert_eq!(offset, 0);
                assert_eq!(
                    kind,
                    IdxErrorKind::BadMagic {
                        expected: IMAGES_MAGIC,
                        found: LABELS_MAGIC
                    }
                );
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = images_file(2, 2, 2, &[1, 2, 3]);
        match parse_idx_images::<f64>(Path::new("t"), &bytes).unwrap_err() {
            Error::Idx { offset, kind, .. } => {
                assert_eq!(offset, 16);
                assert_eq!(
                    kind,
                    IdxErrorKind::Truncated {
                        needed: 24,
                        available: 19
                    }
                );
            }
            other => panic!("{other}"),
        }
        assert!(matches!(
            parse_idx_labels(Path::new("t"), &[0, 0, 8, 1, 0]),
            Err(Error::Idx { offset: 4, .. })
        ));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        std::fs::write(&ip, images_file(2, 1, 1, &[0, 255])).unwrap();
        std::fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 1, 4]).unwrap();
        match load_idx::<f64>(&ip, &lp, None).unwrap_err() {
            Error::Idx { path, kind, .. } => {
                assert_eq!(path, lp);
                assert_eq!(
                    kind,
                    IdxErrorKind::CountMismatch {
                        images: 2,
                        labels: 1
                    }
                );
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn resize_and_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        // Two 2×2 images, labels 0 and 1.
        std::fs::write(
            &ip,
            images_file(2, 2, 2, &[0, 255, 255, 0, 255, 255, 255, 255]),
        )
        .unwrap();
        std::fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 2, 0, 1]).unwrap();
        let set = load_idx::<f64>(&ip, &lp, Some((4, 4))).unwrap();
        assert_eq!(set.images.shape(), &[2, 16]);
        assert_eq!(
            set.images.row(0),
            &[
                -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0,
                -1.0
            ]
        );
        let sched = tasks_from_idx(&set, &set, 2).unwrap();
        assert_eq!(sched.tasks[1].train.labels, vec![2]);
        assert!(sched.tasks[1]
            .train
            .samples
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(tasks_from_idx(&set, &set, 3).is_err());
    }
}
