//! Agent templates and concrete per-query multi-agent systems.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, ExecutionError, TopologyError};

/// Role prototype: the role prompt plus (inert) plugin names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTemplate {
    pub role_id: String,
    pub role_prompt: String,
    #[serde(default)]
    pub plugins: Vec<String>,
}

/// Loads a JSON list of templates. File order fixes the DAG orientation.
pub fn load_templates(path: &Path) -> Result<Vec<AgentTemplate>, Error> {
    let text = std::fs::read_to_string(path)?;
    let templates: Vec<AgentTemplate> = serde_json::from_str(&text)?;
    validate_templates(&templates)?;
    Ok(templates)
}

pub fn validate_templates(templates: &[AgentTemplate]) -> Result<(), Error> {
    if templates.len() < 2 {
        return Err(TopologyError::TooFewAgents(templates.len()).into());
    }
    let mut seen = BTreeSet::new();
    for t in templates {
        if t.role_id.is_empty() || t.role_id.contains('/') {
            return Err(Error::Config(format!("invalid role id `{}`", t.role_id)));
        }
        if !seen.insert(&t.role_id) {
            return Err(Error::Config(format!("duplicate role id `{}`", t.role_id)));
        }
    }
    Ok(())
}

/// Edge admissibility over template indices; only `i < j` entries matter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Admissible {
    allowed: Vec<Vec<bool>>,
}

impl Admissible {
    pub fn all(n: usize) -> Self {
        Self {
            allowed: (0..n).map(|i| (0..n).map(|j| i < j).collect()).collect(),
        }
    }

    pub fn none(n: usize) -> Self {
        Self {
            allowed: vec![vec![false; n]; n],
        }
    }

    /// From `(source role, target role)` pairs. Pairs against the template
    /// order are rejected since they would break acyclicity.
    pub fn from_pairs(templates: &[AgentTemplate], pairs: &[(String, String)]) -> Result<Self, Error> {
        let n = templates.len();
        let index = |role: &str| {
            templates
                .iter()
                .position(|t| t.role_id == role)
                .ok_or_else(|| Error::Config(format!("unknown role `{role}` in admissible edges")))
        };
        let mut out = Self::none(n);
        for (a, b) in pairs {
            let (i, j) = (index(a)?, index(b)?);
            if i >= j {
                return Err(Error::Config(format!(
                    "admissible edge {a} -> {b} goes against the template order"
                )));
            }
            out.allowed[i][j] = true;
        }
        Ok(out)
    }

    pub fn load(path: &Path, templates: &[AgentTemplate]) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let pairs: Vec<(String, String)> = serde_json::from_str(&text)?;
        Self::from_pairs(templates, &pairs)
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed
            .get(i)
            .and_then(|row| row.get(j))
            .copied()
            .unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasNode {
    pub template: AgentTemplate,
    pub backbone_id: String,
}

/// A configured system: nodes plus directed edges `(from, to)` over node
/// indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasInstance {
    pub nodes: Vec<MasNode>,
    pub edges: Vec<(usize, usize)>,
    pub hop_limit: f64,
}

impl MasInstance {
    pub fn validate(&self, catalog: &Catalog) -> Result<(), ExecutionError> {
        if self.nodes.len() < 2 {
            return Err(ExecutionError::InvalidInstance(format!(
                "{} nodes, need at least 2",
                self.nodes.len()
            )));
        }
        for n in &self.nodes {
            if catalog.get(&n.backbone_id).is_none() {
                return Err(ExecutionError::InvalidInstance(format!(
                    "unknown backbone `{}`",
                    n.backbone_id
                )));
            }
        }
        self.topological_order()
            .map_err(|e| ExecutionError::InvalidInstance(e.to_string()))?;
        Ok(())
    }

    pub fn predecessors(&self, node: usize) -> Vec<usize> {
        let mut p: Vec<usize> = self
            .edges
            .iter()
            .filter(|(_, b)| *b == node)
            .map(|(a, _)| *a)
            .collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    pub fn topological_order(&self) -> Result<Vec<usize>, TopologyError> {
        topological_order(self.nodes.len(), &self.edges)
    }
}

/// Kahn's algorithm, always releasing the smallest ready index first.
pub fn topological_order(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, TopologyError> {
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n || a == b {
            return Err(TopologyError::Cycle);
        }
        out[a].push(b);
        indeg[b] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &j in &out[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err(TopologyError::Cycle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tpl(id: &str) -> AgentTemplate {
        AgentTemplate {
            role_id: id.into(),
            role_prompt: format!("You are the {id}."),
            plugins: vec![],
        }
    }

    #[test]
    fn topo_order_prefers_small_indices() {
        assert_eq!(topological_order(4, &[(2, 0), (3, 1)]).unwrap(), vec![2, 0, 3, 1]);
        assert!(topological_order(3, &[(0, 1), (1, 2), (2, 0)]).is_err());
    }

    #[test]
    fn admissible_pairs_follow_template_order() {
        let t = vec![tpl("a"), tpl("b"), tpl("c")];
        let adm = Admissible::from_pairs(&t, &[("a".into(), "c".into())]).unwrap();
        assert!(adm.allows(0, 2));
        assert!(!adm.allows(0, 1));
        assert!(Admissible::from_pairs(&t, &[("c".into(), "a".into())]).is_err());
        assert!(Admissible::all(3).allows(1, 2));
        assert!(!Admissible::all(3).allows(2, 1));
    }

    #[test]
    fn templates_need_unique_ids() {
        assert!(validate_templates(&[tpl("a"), tpl("a")]).is_err());
        assert!(validate_templates(&[tpl("a")]).is_err());
        assert!(validate_templates(&[tpl("a"), tpl("b")]).is_ok());
    }
}
