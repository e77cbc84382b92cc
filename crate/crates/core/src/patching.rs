//! Voxel sampling and 2D transverse patch extraction.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::{read_raw_prefix, write_raw};
use crate::error::{Result, UadError};
use crate::volume::{Mask, Volume};

/// A subject's volume together with its foreground mask.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub volume: Volume,
    pub mask: Mask,
}

/// A `side x side` window of one transverse slice, all channels.
///
/// The window is stored channel-major: `window[(c * side + dy) * side + dx]`
/// holds channel `c` at `(x - r + dx, y - r + dy, z)` with `r = side / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: usize,
    pub channels: usize,
    pub window: Vec<f64>,
    pub location: [usize; 3],
    pub subject_id: String,
}

/// Two patches from different subjects at the same location.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub a: Patch,
    pub b: Patch,
}

/// In-mask voxels whose centred window of half-width `margin` stays inside
/// the x/y field of view.
pub fn eligible_mask(mask: &Mask, margin: usize) -> Mask {
    let [nx, ny, _] = mask.dims();
    let mut out = mask.clone();
    for [x, y, z] in mask.coords() {
        if x < margin || y < margin || x + margin >= nx || y + margin >= ny {
            out.set(x, y, z, false);
        }
    }
    out
}

/// Draws `n` eligible locations uniformly with replacement.
pub fn sample_locations(mask: &Mask, n: usize, margin: usize, rng_seed: u64) -> Result<Vec<[usize; 3]>> {
    let eligible: Vec<[usize; 3]> = eligible_mask(mask, margin).coords().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    draw_locations(&eligible, n, &mut rng)
}

fn draw_locations(eligible: &[[usize; 3]], n: usize, rng: &mut impl Rng) -> Result<Vec<[usize; 3]>> {
    if eligible.is_empty() {
        return Err(UadError::NoEligibleVoxel);
    }
    Ok((0..n).map(|_| *eligible.choose(rng).unwrap()).collect())
}

/// Extracts the `p x p` window of slice `z` centred at `(x, y)`.
pub fn extract_patch(v: &Volume, loc: [usize; 3], p: usize, subject_id: &str) -> Result<Patch> {
    if p % 2 == 0 {
        return Err(UadError::InvalidParameter(format!("patch side {p} must be odd")));
    }
    let [x, y, z] = loc;
    let [nx, ny, nz] = v.dims();
    let r = p / 2;
    if x < r || y < r || x + r >= nx || y + r >= ny || z >= nz {
        return Err(UadError::OutOfBounds { loc, side: p });
    }
    let ch = v.channels();
    let mut window = vec![0.0; ch * p * p];
    for dy in 0..p {
        for dx in 0..p {
            let vox = v.voxel(x - r + dx, y - r + dy, z);
            for c in 0..ch {
                window[(c * p + dy) * p + dx] = vox[c];
            }
        }
    }
    Ok(Patch {
        side: p,
        channels: ch,
        window,
        location: loc,
        subject_id: subject_id.to_string(),
    })
}

/// Subject indices and shared location of one siamese pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairDraw {
    pub a: usize,
    pub b: usize,
    pub location: [usize; 3],
}

/// Draws siamese pair positions: two distinct subjects chosen uniformly
/// and one location eligible in every subject's mask. Patches are not
/// extracted.
pub fn plan_pairs(subjects: &[Subject], n_pairs: usize, p: usize, rng_seed: u64) -> Result<Vec<PairDraw>> {
    if subjects.len() < 2 {
        return Err(UadError::TooFewSubjects {
            needed: 2,
            got: subjects.len(),
        });
    }
    let mut common = subjects[0].mask.clone();
    for s in &subjects[1..] {
        common = common.and(&s.mask)?;
    }
    let eligible: Vec<[usize; 3]> = eligible_mask(&common, p / 2).coords().collect();
    if eligible.is_empty() {
        return Err(UadError::NoEligibleVoxel);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = subjects.len();
    let mut draws = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let location = *eligible.choose(&mut rng).unwrap();
        draws.push(PairDraw { a, b, location });
    }
    Ok(draws)
}

pub fn extract_pair(subjects: &[Subject], draw: &PairDraw, p: usize) -> Result<PatchPair> {
    let (sa, sb) = (&subjects[draw.a], &subjects[draw.b]);
    Ok(PatchPair {
        a: extract_patch(&sa.volume, draw.location, p, &sa.id)?,
        b: extract_patch(&sb.volume, draw.location, p, &sb.id)?,
    })
}

/// [`plan_pairs`] followed by extraction of every pair.
pub fn sample_pairs(subjects: &[Subject], n_pairs: usize, p: usize, rng_seed: u64) -> Result<Vec<PatchPair>> {
    plan_pairs(subjects, n_pairs, p, rng_seed)?
        .iter()
        .map(|d| extract_pair(subjects, d, p))
        .collect()
}

/// Serializes patches as a stream of `(p, p, 1)` `UADV` containers plus a
/// TSV sidecar listing `index, subject_id, x, y, z`.
pub fn write_patch_dump(patches: &[Patch]) -> (Vec<u8>, String) {
    let mut bin = Vec::new();
    let mut tsv = String::from("index\tsubject_id\tx\ty\tz\n");
    for (i, patch) in patches.iter().enumerate() {
        let (p, ch) = (patch.side, patch.channels);
        let mut data = vec![0.0; p * p * ch];
        for c in 0..ch {
            for k in 0..p * p {
                data[k * ch + c] = patch.window[c * p * p + k];
            }
        }
        let v = Volume::new([p, p, 1], ch, [1.0; 3], data).expect("patch is a valid volume");
        bin.extend_from_slice(&write_raw(&v));
        let [x, y, z] = patch.location;
        tsv.push_str(&format!("{i}\t{}\t{x}\t{y}\t{z}\n", patch.subject_id));
    }
    (bin, tsv)
}

pub fn read_patch_dump(bin: &[u8], tsv: &str) -> Result<Vec<Patch>> {
    let mut patches = Vec::new();
    let mut offset = 0;
    for (lineno, line) in tsv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(UadError::Parse(format!("patch sidecar line {}: expected 5 columns", lineno + 1)));
        }
        let coord = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| UadError::Parse(format!("patch sidecar line {}: bad coordinate {s:?}", lineno + 1)))
        };
        let location = [coord(cols[2])?, coord(cols[3])?, coord(cols[4])?];
        let (v, used) = read_raw_prefix(&bin[offset..])?;
        offset += used;
        let [p, p2, one] = v.dims();
        if p != p2 || one != 1 {
            return Err(UadError::ShapeMismatch(format!("patch container dims {:?}", v.dims())));
        }
        let ch = v.channels();
        let mut window = vec![0.0; p * p * ch];
        for (k, vox) in v.data().chunks_exact(ch).enumerate() {
            for c in 0..ch {
                window[c * p * p + k] = vox[c];
            }
        }
        patches.push(Patch {
            side: p,
            channels: ch,
            window,
            location,
            subject_id: cols[1].to_string(),
        });
    }
    if offset != bin.len() {
        return Err(UadError::LengthMismatch(format!(
            "patch dump has {} bytes beyond the listed patches",
            bin.len() - offset
        )));
    }
    Ok(patches)
}
