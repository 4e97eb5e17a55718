//! Dihedral augmentation applied identically to imagery and labels.

use crate::classes::ClassMap;
use crate::error::{Error, Result};
use crate::hash;
use crate::spectral::ChannelStack;

/// One of the 8 symmetries of the square: an optional horizontal flip
/// followed by `rotations` quarter turns clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub rotations: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip: false,
        rotations: 0,
    };

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8u8).map(Dihedral::from_index)
    }

    pub fn from_index(i: u8) -> Dihedral {
        Dihedral {
            flip: i & 4 != 0,
            rotations: i & 3,
        }
    }

    pub fn from_seed(seed: u64) -> Dihedral {
        Dihedral::from_index((hash::mix(&[seed, 0xd1e4]) % 8) as u8)
    }

    pub fn inverse(self) -> Dihedral {
        if self.flip {
            // flip-then-rotate is a reflection, hence an involution
            self
        } else {
            Dihedral {
                flip: false,
                rotations: (4 - self.rotations) % 4,
            }
        }
    }

    /// Where pixel `(x, y)` of an `n`×`n` grid lands.
    #[inline]
    pub fn map(self, x: usize, y: usize, n: usize) -> (usize, usize) {
        let (mut x, mut y) = if self.flip { (n - 1 - x, y) } else { (x, y) };
        for _ in 0..self.rotations {
            (x, y) = (n - 1 - y, x);
        }
        (x, y)
    }

    pub fn apply<T: Copy + Default>(self, plane: &[T], n: usize) -> Vec<T> {
        let mut out = vec![T::default(); n * n];
        for y in 0..n {
            for x in 0..n {
                let (u, v) = self.map(x, y, n);
                out[v * n + u] = plane[y * n + x];
            }
        }
        out
    }
}

/// Applies the seed's dihedral draw to an image tile and its labels.
pub fn augment(
    image: &ChannelStack,
    labels: &ClassMap,
    seed: u64,
) -> Result<(ChannelStack, ClassMap)> {
    augment_with(image, labels, Dihedral::from_seed(seed))
}

pub fn augment_with(
    image: &ChannelStack,
    labels: &ClassMap,
    t: Dihedral,
) -> Result<(ChannelStack, ClassMap)> {
    let n = image.width();
    if image.height() != n || labels.width() != n || labels.height() != n {
        return Err(Error::ShapeMismatch(format!(
            "augmentation needs matching square tiles, got {}x{} image and {}x{} labels",
            image.width(),
            image.height(),
            labels.width(),
            labels.height()
        )));
    }
    let planes = image.planes().iter().map(|p| t.apply(p, n)).collect();
    let valid = image.valid().map(|v| t.apply(v, n));
    let image = image.with_planes(n, n, planes, valid)?;
    let labels = ClassMap::new(n, n, labels.geotransform(), t.apply(labels.labels(), n))?;
    Ok((image, labels))
}
