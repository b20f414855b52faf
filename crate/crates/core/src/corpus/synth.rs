//! Templated synthetic corpora with known spans, for desk-scale testing
//! when real clinical messages are unavailable.
//!
//! Each record draws a label count, then a first (Code, Sub-code) pair from
//! the profile. That pair fixes the message direction (codes admitting both
//! directions flip a coin weighted by `provider_share`); further pairs are
//! drawn from the profile restricted to direction-compatible, unused pairs.
//! With one label per record the pair frequencies follow the profile exactly.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Annotation, GoldRecord, Message, Span};
use crate::codebook::{Codebook, CodeId, Direction, DirectionRule, SubcodeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWeight {
    pub code: CodeId,
    pub subcode: SubcodeId,
    pub weight: f64,
}

/// Label-frequency profile for [`synthesize_corpus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub pairs: Vec<PairWeight>,
    /// Relative weight of 1, 2, 3, ... annotations per record.
    #[serde(default = "default_label_counts")]
    pub labels_per_record: Vec<f64>,
    /// Probability of a provider-authored message when the first pair allows either direction.
    #[serde(default = "default_provider_share")]
    pub provider_share: f64,
    /// Extra unannotated filler sentences per record are drawn from `0..=max_filler`.
    #[serde(default = "default_max_filler")]
    pub max_filler: usize,
}

fn default_label_counts() -> Vec<f64> {
    vec![0.35, 0.3, 0.2, 0.1, 0.05]
}

fn default_provider_share() -> f64 {
    // 380 provider-authored out of 1,137 messages in the annotated corpus.
    380.0 / 1137.0
}

fn default_max_filler() -> usize {
    4
}

/// Approximate long-tail counts per pair, loosely following the imbalance of
/// the annotated corpus: structural markers dominate, shared-decision and
/// expertise labels are rare.
const LONG_TAIL: &[(&str, &str, f64)] = &[
    ("PartnershipPatient", "salutation", 97.0),
    ("PartnershipPatient", "signoff", 85.0),
    ("PartnershipPatient", "activeParticipation/involvement", 91.0),
    ("PartnershipPatient", "Clinical Care", 56.0),
    ("PartnershipPatient", "expressOpinions", 38.0),
    ("PartnershipPatient", "Appreciation/Gratitude", 31.0),
    ("PartnershipPatient", "connection", 14.0),
    ("PartnershipPatient", "statePreferences", 14.0),
    ("PartnershipPatient", "alignment", 5.0),
    ("PartnershipPatient", "build trust", 3.0),
    ("PartnershipProvider", "salutation", 80.0),
    ("PartnershipProvider", "signoff", 70.0),
    ("PartnershipProvider", "Clinical Care", 40.0),
    ("PartnershipProvider", "maintainCommunication", 21.0),
    ("PartnershipProvider", "inviteCollabration", 20.0),
    ("PartnershipProvider", "connection", 12.0),
    ("PartnershipProvider", "requestsForOpinion", 11.0),
    ("PartnershipProvider", "Appreciation/Gratitude", 10.0),
    ("PartnershipProvider", "checkingUnderstanding/clarification", 14.0),
    ("PartnershipProvider", "alignment", 3.0),
    ("PartnershipProvider", "build trust", 3.0),
    ("PartnershipProvider", "acknowledgePatientExpertiseKnowledge", 1.0),
    ("SDOH", "HealthCareAccessAndQuality", 64.0),
    ("SDOH", "EconomicStability", 39.0),
    ("SDOH", "SocialAndCommunityContext", 28.0),
    ("SDOH", "NeighborhoodAndBuiltEnvironment", 11.0),
    ("SDOH", "EducationAccessAndQuality", 4.0),
    ("SocioEmotionalBehaviour", "None", 62.0),
    ("CareCoordinationPatient", "None", 39.0),
    ("CareCoordinationProvider", "None", 35.0),
    ("SharedDecisionPatient", "SeekingApproval", 24.0),
    ("SharedDecisionPatient", "ExploreOptions", 12.0),
    ("SharedDecisionPatient", "ApprovalofDecision/Reinforcement", 2.0),
    ("SharedDecisionProvider", "MakeDecision", 20.0),
    ("SharedDecisionProvider", "ShareOptions", 8.0),
    ("SharedDecisionProvider", "SummarizeAndConfirmUnderstanding", 2.0),
    ("SharedDecisionProvider", "ApprovalofDecision/Reinforcement", 1.0),
];

impl Profile {
    /// Long-tailed profile over the pairs of `cb`. Pairs missing from the
    /// built-in table (non-default codebooks) get weight 5.
    pub fn long_tail(cb: &Codebook) -> Self {
        let pairs = cb
            .pairs()
            .into_iter()
            .map(|(code, subcode)| {
                let weight = LONG_TAIL
                    .iter()
                    .find(|(c, s, _)| *c == code.as_str() && *s == subcode.as_str())
                    .map_or(5.0, |t| t.2);
                PairWeight { code, subcode, weight }
            })
            .collect();
        Self {
            pairs,
            labels_per_record: default_label_counts(),
            provider_share: default_provider_share(),
            max_filler: default_max_filler(),
        }
    }

    /// All mass on one pair, one label per record.
    pub fn single(code: &str, subcode: &str) -> Self {
        Self {
            pairs: vec![PairWeight { code: code.into(), subcode: subcode.into(), weight: 1.0 }],
            labels_per_record: vec![1.0],
            provider_share: default_provider_share(),
            max_filler: default_max_filler(),
        }
    }

    pub fn validate(&self, cb: &Codebook) -> Result<(), ProfileError> {
        let bad = |m: String| Err(ProfileError::InvalidProfile(m));
        if self.pairs.is_empty() {
            return bad("no pairs".into());
        }
        for p in &self.pairs {
            if !cb.is_valid_pair(p.code.as_str(), p.subcode.as_str()) {
                return bad(format!("({}, {}) is not a valid pair", p.code, p.subcode));
            }
            if !p.weight.is_finite() || p.weight < 0.0 {
                return bad(format!("({}, {}) has weight {}", p.code, p.subcode, p.weight));
            }
        }
        if self.pairs.iter().map(|p| p.weight).sum::<f64>() <= 0.0 {
            return bad("total pair weight is zero".into());
        }
        if self.labels_per_record.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.labels_per_record.iter().sum::<f64>() <= 0.0
        {
            return bad("labels_per_record needs non-negative weights with positive sum".into());
        }
        if !(0.0..=1.0).contains(&self.provider_share) {
            return bad(format!("provider_share {} outside [0, 1]", self.provider_share));
        }
        Ok(())
    }
}

const FILLERS: &[&str] = &[
    "I hope this message finds you well.",
    "This is regarding the last visit.",
    "Please see the note below.",
    "It has been a busy week.",
    "Just following up on the earlier message.",
    "The weather has been cold lately.",
    "I wanted to write this down before I forget.",
    "Let me know if anything is unclear.",
];

const NAMES: &[&str] = &["Lee", "Patel", "Garcia", "Nguyen", "Smith", "Okafor", "Rossi", "Kim"];

/// Phrase templates per pair. `[...]` marks the annotated span; without
/// brackets the whole phrase is the span. `{name}` is substituted.
fn phrases(code: &str, subcode: &str) -> &'static [&'static str] {
    match (code, subcode) {
        ("PartnershipPatient", "salutation") => &["[Dr. {name},]", "[Hi Dr. {name},]", "[Good morning Dr. {name},]"],
        ("PartnershipProvider", "salutation") => &["[Hello Mr. {name},]", "[Dear Ms. {name},]", "[Hi {name},]"],
        ("PartnershipPatient", "signoff") => &["[Thank you, {name}]", "[Best regards, {name}]", "[Sincerely, {name}]"],
        ("PartnershipProvider", "signoff") => &["[Take care, Dr. {name}]", "[Best, Dr. {name}]", "[Regards, Nurse {name}]"],
        ("PartnershipPatient", "activeParticipation/involvement") => &[
            "[I have been checking my blood pressure every morning] and it is around 130.",
            "[I started keeping a food diary] like you suggested.",
            "[Should I take the pill with food or on an empty stomach?]",
        ],
        ("PartnershipPatient", "Clinical Care") => &[
            "[The rash on my arm is getting worse] since Monday.",
            "[I have had a headache for three days] now.",
            "[My knee still swells after walking.]",
        ],
        ("PartnershipProvider", "Clinical Care") => &[
            "[Your lab results show normal kidney function.]",
            "[I increased your metformin to 1000 mg twice a day.]",
            "[The x-ray did not show any fracture.]",
        ],
        ("PartnershipPatient", "expressOpinions") => &[
            "[I feel like the new medication is not helping.]",
            "[Honestly the wait at the clinic was too long.]",
        ],
        ("PartnershipPatient", "Appreciation/Gratitude") => &[
            "[I really appreciate you taking the time to explain everything.]",
            "[Thank you so much for calling me back so quickly.]",
        ],
        ("PartnershipProvider", "Appreciation/Gratitude") => &[
            "[Thank you for keeping track of your sugars so carefully.]",
            "[I appreciate you letting us know about the side effects.]",
        ],
        ("PartnershipPatient", "connection") => &[
            "[My daughter just started college this fall.]",
            "[We finally got a puppy last weekend.]",
        ],
        ("PartnershipProvider", "connection") => &[
            "[I hope you enjoyed the holiday with your family.]",
            "[Congratulations on the new grandchild!]",
        ],
        ("PartnershipPatient", "statePreferences") => &[
            "[I would rather try physical therapy before surgery.]",
            "[I prefer morning appointments if possible.]",
        ],
        ("PartnershipPatient", "alignment") => &["[I agree that we should keep watching it.]", "[That plan makes sense to me.]"],
        ("PartnershipProvider", "alignment") => &["[We are on the same page about the plan.]", "[Does that match what you were thinking?]"],
        ("PartnershipPatient", "build trust") => &["[I trust your judgment on this.]", "[I know you have my best interest at heart.]"],
        ("PartnershipProvider", "build trust") => &[
            "[I will be honest with you about every result.]",
            "[You can always count on us to follow through.]",
        ],
        ("PartnershipProvider", "maintainCommunication") => &[
            "[I will let you know once the results come back.]",
            "[We will call you next week with an update.]",
        ],
        ("PartnershipProvider", "inviteCollabration") => &[
            "[Let us work together on a plan for your diet.]",
            "[I would like you to help decide the next step.]",
        ],
        ("PartnershipProvider", "requestsForOpinion") => &[
            "[What do you think about starting the new inhaler?]",
            "[How do you feel about this treatment option?]",
        ],
        ("PartnershipProvider", "checkingUnderstanding/clarification") => &[
            "[Does that make sense?]",
            "[Can you tell me how you are taking the medication now?]",
        ],
        ("PartnershipProvider", "acknowledgePatientExpertiseKnowledge") => &[
            "[You know your body best.]",
            "[Your notes about the triggers are very helpful.]",
        ],
        ("SDOH", "HealthCareAccessAndQuality") => &[
            "[my insurance will not cover the specialist]",
            "[I could not get an appointment for two months]",
        ],
        ("SDOH", "EconomicStability") => &["[I can't afford the copay]", "[I lost my job last month]"],
        ("SDOH", "SocialAndCommunityContext") => &["[I live alone and have no one to help me]", "[my sister helps me with groceries]"],
        ("SDOH", "NeighborhoodAndBuiltEnvironment") => &["[I have no ride to the clinic]", "[the bus does not run near my house]"],
        ("SDOH", "EducationAccessAndQuality") => &["[I have trouble reading the instructions]", "[I never finished high school]"],
        ("SocioEmotionalBehaviour", "None") => &[
            "[I am so sorry you are going through this.]",
            "[Please do not worry, we will take care of it.]",
            "[I am really scared about the biopsy.]",
        ],
        ("CareCoordinationPatient", "None") => &[
            "[I need my prescription sent to the pharmacy]",
            "[Can you fax the records to my cardiologist?]",
        ],
        ("CareCoordinationProvider", "None") => &[
            "[I sent the referral to the orthopedic clinic.]",
            "[The pharmacy should have your refill today.]",
        ],
        ("SharedDecisionPatient", "SeekingApproval") => &[
            "[Is it okay if I stop the antibiotic early?]",
            "[Can I take ibuprofen with this?]",
        ],
        ("SharedDecisionPatient", "ExploreOptions") => &[
            "[Are there other options besides surgery?]",
            "[What are the alternatives to this medication?]",
        ],
        ("SharedDecisionPatient", "ApprovalofDecision/Reinforcement") => &["[Okay, let us go ahead with the injection.]"],
        ("SharedDecisionProvider", "MakeDecision") => &[
            "[We will start you on the lower dose.]",
            "[Let us schedule the MRI for next week.]",
        ],
        ("SharedDecisionProvider", "ShareOptions") => &[
            "[You could either continue the pills or try the injection.]",
            "[One option is physical therapy, another is a brace.]",
        ],
        ("SharedDecisionProvider", "SummarizeAndConfirmUnderstanding") => &[
            "[To summarize, we agreed to recheck labs in a month.]",
        ],
        ("SharedDecisionProvider", "ApprovalofDecision/Reinforcement") => &["[That was a great decision to quit smoking.]"],
        _ => &[],
    }
}

/// Renders a phrase template into (text, span range in chars relative to phrase start).
fn instantiate(template: &str, name: &str) -> (String, usize, usize) {
    let filled = template.replace("{name}", name);
    match (filled.find('['), filled.find(']')) {
        (Some(a), Some(b)) if a < b => {
            let before = &filled[..a];
            let inside = &filled[a + 1..b];
            let after = &filled[b + 1..];
            let start = before.chars().count();
            let end = start + inside.chars().count();
            (format!("{before}{inside}{after}"), start, end)
        }
        _ => {
            let len = filled.chars().count();
            (filled, 0, len)
        }
    }
}

pub fn synthesize_corpus(
    cb: &Codebook,
    profile: &Profile,
    n: usize,
    seed: u64,
) -> Result<Vec<GoldRecord>, ProfileError> {
    profile.validate(cb)?;
    if n == 0 {
        return Err(ProfileError::InvalidProfile("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = profile.pairs.iter().map(|p| p.weight).collect();
    let pair_dist = WeightedIndex::new(&weights)
        .map_err(|e| ProfileError::InvalidProfile(e.to_string()))?;
    let count_dist = WeightedIndex::new(&profile.labels_per_record)
        .map_err(|e| ProfileError::InvalidProfile(e.to_string()))?;

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = count_dist.sample(&mut rng) + 1;
        let first = pair_dist.sample(&mut rng);
        let direction = match cb.direction_rule(profile.pairs[first].code.as_str()) {
            Some(DirectionRule::Y) => Direction::Y,
            Some(DirectionRule::N) => Direction::N,
            _ if rng.gen_bool(profile.provider_share) => Direction::Y,
            _ => Direction::N,
        };
        let mut chosen = vec![first];
        while chosen.len() < k {
            let candidates: Vec<f64> = profile
                .pairs
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    if chosen.contains(&j) || !cb.is_direction_consistent(p.code.as_str(), direction) {
                        0.0
                    } else {
                        p.weight
                    }
                })
                .collect();
            match WeightedIndex::new(&candidates) {
                Ok(d) => chosen.push(d.sample(&mut rng)),
                Err(_) => break,
            }
        }
        out.push(compose(i, seed, direction, &chosen, profile, &mut rng));
    }
    Ok(out)
}

fn compose(
    index: usize,
    seed: u64,
    direction: Direction,
    chosen: &[usize],
    profile: &Profile,
    rng: &mut impl Rng,
) -> GoldRecord {
    // Greetings open the message and sign-offs close it.
    let rank = |j: &usize| match profile.pairs[*j].subcode.as_str() {
        "salutation" => 0,
        "signoff" => 2,
        _ => 1,
    };
    let mut ordered = chosen.to_vec();
    ordered.sort_by_key(rank);

    let mut segments: Vec<(String, Option<(usize, usize, usize)>)> = Vec::new();
    for (slot, &j) in ordered.iter().enumerate() {
        let p = &profile.pairs[j];
        let bank = phrases(p.code.as_str(), p.subcode.as_str());
        let name = NAMES[rng.gen_range(0..NAMES.len())];
        let (text, s, e) = if bank.is_empty() {
            let t = format!("[This note concerns {} and {}.]", p.code, p.subcode);
            instantiate(&t, name)
        } else {
            instantiate(bank[rng.gen_range(0..bank.len())], name)
        };
        segments.push((text, Some((j, s, e))));
        if slot + 1 < ordered.len() && rank(&j) == 1 && rng.gen_bool(0.5) {
            segments.push((FILLERS[rng.gen_range(0..FILLERS.len())].to_owned(), None));
        }
    }
    let fillers = rng.gen_range(0..=profile.max_filler);
    for _ in 0..fillers {
        let at = if segments.len() > 1 { rng.gen_range(1..segments.len()) } else { segments.len() };
        segments.insert(at, (FILLERS[rng.gen_range(0..FILLERS.len())].to_owned(), None));
    }

    let mut text = String::new();
    let mut annotations = Vec::new();
    for (seg, ann) in segments {
        if !text.is_empty() {
            text.push(' ');
        }
        let base = text.chars().count();
        text.push_str(&seg);
        if let Some((j, s, e)) = ann {
            let p = &profile.pairs[j];
            let span = Span::from_offsets(&text, base + s, base + e).expect("span inside segment");
            annotations.push(Annotation { code: p.code.clone(), subcode: p.subcode.clone(), span });
        }
    }
    annotations.sort_by(|a, b| a.span.start.cmp(&b.span.start));
    let mut message = Message::new(format!("syn-{seed}-{index:05}"), text, direction);
    message.source = Some("synthetic".into());
    GoldRecord { message, annotations }
}
