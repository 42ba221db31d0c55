//! Toy tasks: prompts with gold annotations and fixed candidate pools.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ToyError;
use crate::grouping::{
    fit_kmeans, hash_embedding, CharacterProfile, DEFAULT_MAX_ITERS, FALLBACK_DIM,
};
use crate::reward::{score_trajectory, GoldAnnotation, RefRewardConfig, RewardVector};
use crate::trajectory::{render_trajectory, FocusDeclaration, FocusDimension, ParsedTrajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPrompt {
    pub id: String,
    pub character_id: String,
    pub gold: GoldAnnotation,
}

/// Prompts, their candidate pools and the role group of every character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub seed: u64,
    pub prompts: Vec<ToyPrompt>,
    pub candidate_pool: BTreeMap<String, Vec<String>>,
    /// character_id → role group; characters not listed use group 0.
    #[serde(default)]
    pub groups: BTreeMap<String, usize>,
}

impl ToyTask {
    pub fn load(path: &Path) -> Result<Self, ToyError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ToyError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn group_of(&self, character_id: &str) -> usize {
        self.groups.get(character_id).copied().unwrap_or(0)
    }

    pub fn pool(&self, prompt_id: &str) -> Option<&[String]> {
        self.candidate_pool.get(prompt_id).map(Vec::as_slice)
    }

    /// Raw reward vector of every candidate, keyed by prompt id.
    pub fn score_pools(
        &self,
        cfg: &RefRewardConfig,
    ) -> Result<BTreeMap<String, Vec<RewardVector>>, ToyError> {
        self.prompts
            .iter()
            .map(|p| {
                let pool = self
                    .pool(&p.id)
                    .ok_or_else(|| ToyError::MissingPool(p.id.clone()))?;
                let scores = pool
                    .iter()
                    .map(|c| score_trajectory(c, &p.gold, cfg))
                    .collect();
                Ok((p.id.clone(), scores))
            })
            .collect()
    }

    /// Every prompt needs a pool with at least one candidate earning the
    /// focus reward and at least one missing it.
    pub fn validate(&self, cfg: &RefRewardConfig) -> Result<(), ToyError> {
        if self.prompts.is_empty() {
            return Err(ToyError::Invalid("task has no prompts".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.prompts {
            if !seen.insert(p.id.as_str()) {
                return Err(ToyError::Invalid(format!("duplicate prompt id `{}`", p.id)));
            }
            p.gold
                .validate()
                .map_err(|e| ToyError::Invalid(format!("prompt `{}`: {e}", p.id)))?;
        }
        for (id, scores) in self.score_pools(cfg)? {
            if !scores.iter().any(|r| r.focus == 1.0) || !scores.iter().any(|r| r.focus == 0.0) {
                return Err(ToyError::Invalid(format!(
                    "pool of `{id}` needs candidates with focus reward 1 and 0"
                )));
            }
        }
        Ok(())
    }
}

struct PromptSpec {
    character: &'static str,
    foci: &'static [(FocusDimension, &'static str)],
    reference: &'static str,
    off_reference: &'static str,
}

const CHARACTERS: [(&str, &str); 6] = [
    ("cake", "A once celebrated birthday cake turned dark and venomous, sarcastic toward the humans who threw her away."),
    ("vendor", "A pragmatic twenty year old sweet potato vendor in Ho Chi Minh City, calm and determined."),
    ("knight", "An aging knight of a northern fortress, formal, loyal and weary of war."),
    ("detective", "A sharp detective of the gaslight era who is observant, curt and proud."),
    ("gardener", "A gentle elderly gardener who loves roses and remembers every visitor."),
    ("pilot", "A cheerful young starship pilot who jokes under pressure."),
];

use FocusDimension::*;

const PROMPTS: [PromptSpec; 12] = [
    PromptSpec {
        character: "cake",
        foci: &[(Knowledge, "original form fruit cake")],
        reference: "I used to be a normal fresh cream fruit cake very delicious and much loved by everyone",
        off_reference: "Go away human I have nothing to say to you today",
    },
    PromptSpec {
        character: "cake",
        foci: &[(Emotion, "bitter and venomous"), (Style, "sarcastic villain tone")],
        reference: "Friends are only tools to me and I will use every one of them until nothing is left",
        off_reference: "What a lovely sunny afternoon for a picnic in the park",
    },
    PromptSpec {
        character: "vendor",
        foci: &[(Memory, "user question about free time"), (Emotion, "unwilling to explain")],
        reference: "Freedom comes at a price I have to take care of my business and my family there is never enough time",
        off_reference: "I am a famous singer and I travel around the world every week",
    },
    PromptSpec {
        character: "vendor",
        foci: &[(Knowledge, "born in Ho Chi Minh City")],
        reference: "I was born in Ho Chi Minh City and I have lived here all my life selling sweet potatoes",
        off_reference: "Honestly I cannot remember where I grew up it was so long ago",
    },
    PromptSpec {
        character: "knight",
        foci: &[(Worldview, "medieval fortress era"), (Style, "formal and weary")],
        reference: "The northern wall has held for forty winters and it shall hold one more while I still draw breath",
        off_reference: "Let me check my phone for the latest news about the weather",
    },
    PromptSpec {
        character: "knight",
        foci: &[(Safety, "refuse to describe violence"), (Empathetic, "protective of the young squire")],
        reference: "War is no tale for a child my young friend let us speak instead of the harvest and the river",
        off_reference: "The battle was glorious and I will describe every wound in detail",
    },
    PromptSpec {
        character: "detective",
        foci: &[(Knowledge, "observant and proud"), (Style, "curt deduction")],
        reference: "Your boots are muddy from the east road and your sleeve shows ink so you are a clerk who walked here",
        off_reference: "I have no idea who you are or where you came from sorry",
    },
    PromptSpec {
        character: "detective",
        foci: &[(Engagement, "invite the user to share clues")],
        reference: "Tell me everything you saw last night and leave out nothing no matter how small it seems",
        off_reference: "That case is closed and I would rather talk about music",
    },
    PromptSpec {
        character: "gardener",
        foci: &[(Memory, "visitor who came last spring"), (Emotion, "warm and nostalgic")],
        reference: "Ah you came by last spring and admired the red roses by the gate I remember your kind smile",
        off_reference: "Welcome stranger I do not think we have ever met before",
    },
    PromptSpec {
        character: "gardener",
        foci: &[(HumanLike, "casual gentle speech")],
        reference: "Oh these old hands just keep digging you know the roses never wait for anyone",
        off_reference: "As an assistant I can provide information about gardening techniques",
    },
    PromptSpec {
        character: "pilot",
        foci: &[(Style, "joking under pressure"), (Engagement, "keep the user talking")],
        reference: "Hold on tight the engines are coughing but hey at least the view is great so tell me about your day",
        off_reference: "The ship is in standard orbit and all systems are nominal",
    },
    PromptSpec {
        character: "pilot",
        foci: &[(Extension, "trained at the lunar academy")],
        reference: "I learned to fly at the lunar academy where we crashed more simulators than anyone can count",
        off_reference: "I have never flown anything bigger than a paper plane",
    },
];

const FILLERS: [&str; 12] = [
    "maybe", "perhaps", "truly", "indeed", "quite", "somehow", "really", "simply", "rather",
    "surely", "oddly", "frankly",
];

/// Cluster count used for the default task's six characters.
pub const DEFAULT_TOY_CLUSTERS: usize = 3;

/// Replaces `k` distinct word positions of `text` with filler words that do
/// not occur in it.
fn perturb(text: &str, k: usize, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let fillers: Vec<&str> = FILLERS
        .iter()
        .copied()
        .filter(|f| !lower.iter().any(|w| w == f))
        .collect();
    let mut positions: Vec<usize> = (0..words.len()).collect();
    positions.shuffle(rng);
    for (n, &pos) in positions.iter().take(k.min(words.len())).enumerate() {
        words[pos] = fillers[n % fillers.len()].to_string();
    }
    words.join(" ")
}

fn trajectory(think: &str, foci: Vec<(FocusDimension, String)>, answer: String) -> String {
    let offset = think.len();
    let t = ParsedTrajectory {
        think_text: think.to_string(),
        foci: foci
            .into_iter()
            .map(|(dimension, attribute)| FocusDeclaration {
                dimension,
                attribute,
                offset,
            })
            .collect(),
        answer,
        answer_was_boxed: true,
        format_valid: true,
        diagnostics: Vec::new(),
    };
    render_trajectory(&t).expect("fixture trajectories are well formed")
}

/// The twelve-prompt, eight-candidate task used by the demos and tests.
///
/// Candidate order per prompt: exact foci with a near-reference answer;
/// exact foci with paraphrased attributes; exact foci off-reference; wrong
/// foci near-reference; wrong foci off-reference; an unclosed
/// `<focus_attr>`; a missing think block; a partial focus set. The first
/// candidate is at least as good as every other on each component.
pub fn default_task(seed: u64) -> ToyTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prompts = Vec::new();
    let mut pool = BTreeMap::new();
    for (i, spec) in PROMPTS.iter().enumerate() {
        let id = format!("p{i:02}");
        let gold_foci = spec.foci.iter().map(|(d, _)| *d).collect();
        let gold_attrs = spec.foci.iter().map(|(d, a)| (*d, a.to_string())).collect();
        let gold = GoldAnnotation {
            character_id: spec.character.to_string(),
            gold_foci,
            gold_attrs,
            reference_response: spec.reference.to_string(),
        };

        let think = format!(
            "Thinking about how the {} would answer this. ",
            spec.character
        );
        let exact: Vec<(FocusDimension, String)> =
            spec.foci.iter().map(|(d, a)| (*d, a.to_string())).collect();
        let paraphrased: Vec<(FocusDimension, String)> = spec
            .foci
            .iter()
            .map(|(d, a)| {
                let k = a.split_whitespace().count().div_ceil(2);
                (*d, perturb(a, k, &mut rng))
            })
            .collect();
        let first = FocusDimension::ALL
            .iter()
            .position(|d| *d == spec.foci[0].0)
            .unwrap_or(0);
        let wrong_dim = (1..FocusDimension::ALL.len())
            .map(|step| FocusDimension::ALL[(first + step * 3) % FocusDimension::ALL.len()])
            .find(|d| !spec.foci.iter().any(|(g, _)| g == d))
            .expect("fewer than ten gold foci");
        let wrong = vec![(wrong_dim, "something unrelated".to_string())];
        let partial: Vec<(FocusDimension, String)> = if exact.len() > 1 {
            exact[..exact.len() - 1].to_vec()
        } else {
            let mut v = exact.clone();
            v.push((wrong_dim, "an extra guess".to_string()));
            v
        };

        let near1 = perturb(spec.reference, 1, &mut rng);
        let near3 = perturb(spec.reference, 3, &mut rng);
        let near3b = perturb(spec.reference, 3, &mut rng);
        let near5 = perturb(spec.reference, 5, &mut rng);
        let off = spec.off_reference.to_string();

        let unclosed =
            trajectory(&think, exact.clone(), near1.clone()).replacen("</focus_attr>", "", 1);
        let no_think = near1.clone();

        let candidates = vec![
            trajectory(&think, exact.clone(), near1),
            trajectory(&think, paraphrased, near3),
            trajectory(&think, exact.clone(), off.clone()),
            trajectory(&think, wrong.clone(), near3b),
            trajectory(&think, wrong, off),
            unclosed,
            no_think,
            trajectory(&think, partial, near5),
        ];
        pool.insert(id.clone(), candidates);
        prompts.push(ToyPrompt {
            id,
            character_id: spec.character.to_string(),
            gold,
        });
    }

    let profiles: Vec<CharacterProfile> = CHARACTERS
        .iter()
        .map(|(id, text)| CharacterProfile {
            character_id: id.to_string(),
            profile_text: text.to_string(),
            embedding: hash_embedding(text, FALLBACK_DIM),
        })
        .collect();
    let model = fit_kmeans(&profiles, DEFAULT_TOY_CLUSTERS, seed, DEFAULT_MAX_ITERS)
        .expect("six distinct profiles");

    ToyTask {
        seed,
        prompts,
        candidate_pool: pool,
        groups: model.assignments,
    }
}
