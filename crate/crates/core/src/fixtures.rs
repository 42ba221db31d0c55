//! Deterministic fixtures shared by tests, the CLI demos and the toy trainer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::grouping::CharacterProfile;

/// Spread of each blob around its center.
pub const BLOB_SIGMA: f64 = 0.05;
/// Distance between any two blob centers.
pub const BLOB_SEPARATION: f64 = 10.0;

/// Three isotropic Gaussian blobs of `per_blob` points each in `dim`
/// dimensions (`dim >= 1`), with their true labels.
pub fn three_blobs(per_blob: usize, dim: usize, seed: u64) -> (Vec<CharacterProfile>, Vec<usize>) {
    let dim = dim.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, BLOB_SIGMA).expect("positive sigma");
    let mut profiles = Vec::with_capacity(3 * per_blob);
    let mut labels = Vec::with_capacity(3 * per_blob);
    for blob in 0..3 {
        // Centers on distinct axes (or along one axis in 1-D), pairwise
        // at least BLOB_SEPARATION apart.
        let mut center = vec![0.0; dim];
        if dim >= 2 {
            if blob > 0 {
                center[blob - 1] = BLOB_SEPARATION;
            }
        } else {
            center[0] = BLOB_SEPARATION * blob as f64;
        }
        for i in 0..per_blob {
            let embedding = center.iter().map(|c| c + noise.sample(&mut rng)).collect();
            profiles.push(CharacterProfile {
                character_id: format!("blob{blob}-{i:03}"),
                profile_text: format!("synthetic character {i} of blob {blob}"),
                embedding,
            });
            labels.push(blob);
        }
    }
    (profiles, labels)
}

/// Sample output for the cake character, with a plain trailing answer.
pub const CAKE_TRANSCRIPT: &str = "<think>I need to describe my original form. \n<focus>Knowledge</focus>\n<focus_attr>Original form</focus_attr>\n</think>\nI was originally a fresh cream fruit cake, freshly baked and most delicious. Back then, I had a pure heart and the purest joy.";

pub const CAKE_REFERENCE: &str = "I used to be a normal, fresh cream fruit cake, very delicious and much loved. At that time, I was filled with love and longing for the world. I had my own dreams and hopes. Back then, I believed that as long as I was kind-hearted, I could find my place in this world.";

/// Sample output for the street-vendor character: six foci, no
/// prose in the think block, plain trailing answer.
pub const VENDOR_TRANSCRIPT: &str = "<think>\n<focus>Emotion</focus><focus_attr>Unwilling to explain</focus_attr><focus>Engagement</focus><focus_attr>Encourage user to continue</focus_attr><focus>Style</focus><focus_attr>Direct and honest</focus_attr><focus>Memory</focus><focus_attr>User's question about time</focus_attr><focus>Human_Like</focus><focus_attr>Natural conversation\n</focus_attr><focus>Empathetic</focus><focus_attr>Understanding and supportive</focus_attr>\n</think>\n\nI have to take care of my business, it's not that flexible.";

pub const VENDOR_REFERENCE: &str =
    "Freedom comes at a price. I have to take care of my business and my family... there's never enough time.";
