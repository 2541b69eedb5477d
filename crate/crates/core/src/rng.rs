use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::{Archive, ArchiveError};

/// The seeded generator every run draws its randomness from.
pub type RunRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for one purpose within a run: same seed, distinct stream.
pub fn child(seed: u64, stream: u64) -> RunRng {
    let mut rng = seeded(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn save(rng: &RunRng, archive: &mut Archive, name: &str) {
    let pos = rng.get_word_pos();
    archive.push_bytes(format!("{name}.seed"), &rng.get_seed());
    archive.push_u64s(
        format!("{name}.pos"),
        &[rng.get_stream(), pos as u64, (pos >> 64) as u64],
    );
}

pub(crate) fn load(archive: &Archive, name: &str) -> Result<RunRng, ArchiveError> {
    let seed: [u8; 32] = archive
        .bytes(&format!("{name}.seed"))?
        .try_into()
        .map_err(|_| ArchiveError::Type(format!("{name}.seed")))?;
    let pos = archive.u64s(&format!("{name}.pos"))?;
    let [stream, lo, hi] = pos[..] else {
        return Err(ArchiveError::Type(format!("{name}.pos")));
    };
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(((hi as u128) << 64) | lo as u128);
    Ok(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn state_survives_archive() {
        let mut rng = seeded(9);
        for _ in 0..17 {
            rng.random::<u32>();
        }
        let mut a = Archive::new("rng");
        save(&rng, &mut a, "r");
        let mut back = load(&Archive::from_bytes(&a.to_bytes()).unwrap(), "r").unwrap();
        for _ in 0..10 {
            assert_eq!(rng.random::<u64>(), back.random::<u64>());
        }
    }
}
