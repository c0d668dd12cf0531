use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::PromptError;
use crate::agents::AgentId;
use crate::knowledge_base::TrainingExample;

/// Few-shot examples handed to each agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotAllocation {
    pub per_agent: BTreeMap<AgentId, Vec<TrainingExample>>,
    pub seed: u64,
    /// Set when the pool was too small for disjoint slices.
    pub overlap_warning: Option<String>,
}

impl FewShotAllocation {
    pub fn for_agent(&self, agent: AgentId) -> &[TrainingExample] {
        self.per_agent.get(&agent).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.per_agent
            .values()
            .flatten()
            .all(|ex| seen.insert((ex.utterance.as_str(), ex.gold_id.as_str())))
    }
}

/// Seeded shuffle of `pool`, then consecutive disjoint slices of
/// `count_per_agent`. When the pool cannot cover every agent, each agent
/// samples without replacement on its own and overlap is reported.
pub fn allocate_few_shots(
    pool: &[TrainingExample],
    agent_ids: &[AgentId],
    count_per_agent: usize,
    seed: u64,
) -> Result<FewShotAllocation, PromptError> {
    if pool.is_empty() {
        return Err(PromptError::EmptyPool);
    }
    let count = count_per_agent.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<&TrainingExample> = pool.iter().collect();
    shuffled.shuffle(&mut rng);

    let mut per_agent = BTreeMap::new();
    let mut overlap_warning = None;
    if pool.len() >= agent_ids.len() * count {
        for (i, agent) in agent_ids.iter().enumerate() {
            let slice = &shuffled[i * count..(i + 1) * count];
            per_agent.insert(*agent, slice.iter().map(|e| (*e).clone()).collect());
        }
    } else {
        let take = count.min(pool.len());
        for agent in agent_ids {
            let picked: Vec<TrainingExample> = shuffled
                .choose_multiple(&mut rng, take)
                .map(|e| (*e).clone())
                .collect();
            per_agent.insert(*agent, picked);
        }
        let msg = format!(
            "pool of {} examples cannot give {} agents {} unique examples each; slices overlap",
            pool.len(),
            agent_ids.len(),
            count
        );
        tracing::warn!("{msg}");
        overlap_warning = Some(msg);
    }
    Ok(FewShotAllocation {
        per_agent,
        seed,
        overlap_warning,
    })
}

/// Every agent receives the same seeded sample.
pub fn allocate_shared_few_shots(
    pool: &[TrainingExample],
    agent_ids: &[AgentId],
    count_per_agent: usize,
    seed: u64,
) -> Result<FewShotAllocation, PromptError> {
    if pool.is_empty() {
        return Err(PromptError::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared: Vec<TrainingExample> = pool
        .choose_multiple(&mut rng, count_per_agent.max(1).min(pool.len()))
        .cloned()
        .collect();
    Ok(FewShotAllocation {
        per_agent: agent_ids.iter().map(|a| (*a, shared.clone())).collect(),
        seed,
        overlap_warning: None,
    })
}
