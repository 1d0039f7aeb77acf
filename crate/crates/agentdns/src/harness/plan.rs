//! Action plans and the planner seam.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("plan does not parse: {0}")]
    Parse(String),
    #[error("invalid plan: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionStep {
    pub index: usize,
    pub purpose: String,
    pub needs_service: bool,
    /// Natural-language description of the wanted service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_function: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionPlan {
    /// The user request the plan answers, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<String>,
    pub steps: Vec<ActionStep>,
}

impl ActionPlan {
    pub fn parse(json: &str) -> Result<Self, PlanError> {
        let plan: ActionPlan = serde_json::from_str(json).map_err(|e| PlanError::Parse(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.steps.is_empty() {
            return Err(PlanError::Invalid("plan has no steps".into()));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.index != i + 1 {
                return Err(PlanError::Invalid(format!(
                    "step indices must run 1..={} in order; found {} at position {}",
                    self.steps.len(),
                    step.index,
                    i + 1
                )));
            }
            let has_tool = step
                .tool_function
                .as_deref()
                .is_some_and(|t| !t.trim().is_empty());
            if step.needs_service != has_tool {
                return Err(PlanError::Invalid(format!(
                    "step {}: tool_function must be present exactly when needs_service is true",
                    step.index
                )));
            }
        }
        Ok(())
    }

    pub fn service_steps(&self) -> impl Iterator<Item = &ActionStep> {
        self.steps.iter().filter(|s| s.needs_service)
    }
}

/// Turns a user request into a plan. Fixtures stand in for an LLM here.
pub trait Planner {
    fn plan(&self, request: &str) -> Result<ActionPlan, PlanError>;
}

/// Returns the same recorded plan for every request.
pub struct FixturePlanner {
    plan: ActionPlan,
}

impl FixturePlanner {
    pub fn new(plan: ActionPlan) -> Self {
        Self { plan }
    }
}

impl Planner for FixturePlanner {
    fn plan(&self, _request: &str) -> Result<ActionPlan, PlanError> {
        Ok(self.plan.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(index: usize, tool: Option<&str>) -> ActionStep {
        ActionStep {
            index,
            purpose: "p".into(),
            needs_service: tool.is_some(),
            tool_function: tool.map(str::to_string),
        }
    }

    #[test]
    fn validation_rules() {
        let ok = ActionPlan {
            request: None,
            steps: vec![step(1, Some("search")), step(2, None)],
        };
        ok.validate().unwrap();
        assert_eq!(ok.service_steps().count(), 1);

        let empty = ActionPlan { request: None, steps: vec![] };
        assert!(empty.validate().is_err());

        let gap = ActionPlan {
            request: None,
            steps: vec![step(1, None), step(3, None)],
        };
        assert!(gap.validate().is_err());

        let mut missing = step(1, None);
        missing.needs_service = true;
        assert!(ActionPlan { request: None, steps: vec![missing] }.validate().is_err());

        let mut extra = step(1, Some("x"));
        extra.needs_service = false;
        assert!(ActionPlan { request: None, steps: vec![extra] }.validate().is_err());
    }

    #[test]
    fn parse_errors_are_classified() {
        assert!(matches!(ActionPlan::parse("{"), Err(PlanError::Parse(_))));
        assert!(matches!(
            ActionPlan::parse(r#"{"steps":[{"index":1,"purpose":"x","needs_service":true}]}"#),
            Err(PlanError::Invalid(_))
        ));
        assert!(matches!(
            ActionPlan::parse(r#"{"steps":[],"extra":1}"#),
            Err(PlanError::Parse(_))
        ));
    }

    #[test]
    fn fixture_planner_ignores_request() {
        let plan = ActionPlan {
            request: None,
            steps: vec![step(1, None)],
        };
        assert_eq!(FixturePlanner::new(plan.clone()).plan("anything").unwrap(), plan);
    }
}
