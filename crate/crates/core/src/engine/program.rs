use std::fmt;
use std::str::FromStr;

use super::EngineError;
use crate::field::FieldElement;
use crate::sharing::ThresholdConfig;

/// One step of a protocol program.
///
/// Programs fold the parties' inputs into a single accumulator: after `Close`
/// the accumulator holds party 1's input, and every `AddLocal` / `MulRound`
/// combines it with the input of party `operand + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    /// Every party secret-shares its input. One communication round.
    Close,
    /// Local share addition; no communication.
    AddLocal { operand: usize },
    /// Share multiplication followed by a resharing round for degree reduction.
    MulRound { operand: usize },
    /// Shares of the accumulator are exchanged and interpolated.
    Open,
}

impl Step {
    pub fn communicates(&self) -> bool {
        !matches!(self, Step::AddLocal { .. })
    }
}

/// A validated step sequence for a fixed number of parties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolProgram {
    steps: Vec<Step>,
    cfg: ThresholdConfig,
}

impl ProtocolProgram {
    pub fn new(steps: Vec<Step>, cfg: &ThresholdConfig) -> Result<Self, EngineError> {
        let n = cfg.parties();
        let invalid = |m: String| Err(EngineError::InvalidProgram(m));
        if steps.first() != Some(&Step::Close) {
            return invalid("program must start with close".into());
        }
        if steps.last() != Some(&Step::Open) {
            return invalid("program must end with open".into());
        }
        let mut used = vec![false; n];
        used[0] = true;
        for (i, step) in steps.iter().enumerate() {
            match *step {
                Step::Close if i != 0 => return invalid(format!("close at step {} after the input phase", i + 1)),
                Step::Open if i + 1 != steps.len() => return invalid(format!("open at step {} before the end", i + 1)),
                Step::AddLocal { operand } | Step::MulRound { operand } => {
                    if operand == 0 || operand >= n {
                        return invalid(format!("operand {operand} out of range for {n} parties"));
                    }
                    if std::mem::replace(&mut used[operand], true) {
                        return invalid(format!("input of party {} consumed twice", operand + 1));
                    }
                }
                _ => {}
            }
        }
        Ok(Self { steps, cfg: *cfg })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Total number of steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn parties(&self) -> usize {
        self.cfg.parties()
    }

    pub fn cfg(&self) -> &ThresholdConfig {
        &self.cfg
    }

    pub fn communication_rounds(&self) -> usize {
        self.steps.iter().filter(|s| s.communicates()).count()
    }

    pub fn mul_rounds(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::MulRound { .. })).count()
    }

    /// Local computation phases between (and around) the communication rounds.
    pub fn computation_phases(&self) -> usize {
        self.communication_rounds() + 1
    }

    /// Every party sends one message to every other party in every round.
    pub fn total_messages(&self) -> usize {
        self.communication_rounds() * (self.parties() * self.parties() - self.parties())
    }

    /// The value the protocol computes, evaluated in the clear.
    pub fn evaluate_plaintext(&self, inputs: &[FieldElement]) -> FieldElement {
        let mut acc = inputs[0];
        for step in &self.steps {
            match *step {
                Step::AddLocal { operand } => acc = acc + inputs[operand],
                Step::MulRound { operand } => acc = acc * inputs[operand],
                Step::Close | Step::Open => {}
            }
        }
        acc
    }

    /// Parses the plan format: one of `close`, `add`, `mul`, `open` per line.
    /// Blank lines and `#` comments are ignored. Operands are assigned in
    /// order, so the k-th `add`/`mul` consumes party k+1's input.
    pub fn parse_plan(text: &str, cfg: &ThresholdConfig) -> Result<Self, EngineError> {
        let mut steps = Vec::new();
        let mut next_operand = 1;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let step = match line.to_ascii_lowercase().as_str() {
                "close" => Step::Close,
                "open" => Step::Open,
                "add" => Step::AddLocal { operand: next_operand },
                "mul" => Step::MulRound { operand: next_operand },
                other => {
                    return Err(EngineError::InvalidProgram(format!("line {}: unknown step {other:?}", lineno + 1)))
                }
            };
            if matches!(step, Step::AddLocal { .. } | Step::MulRound { .. }) {
                next_operand += 1;
            }
            steps.push(step);
        }
        Self::new(steps, cfg)
    }

    pub fn to_plan(&self) -> String {
        self.steps.iter().map(|s| format!("{}\n", StepName(s))).collect()
    }
}

struct StepName<'a>(&'a Step);

impl fmt::Display for StepName<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            Step::Close => "close",
            Step::AddLocal { .. } => "add",
            Step::MulRound { .. } => "mul",
            Step::Open => "open",
        })
    }
}

/// Built-in protocols selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Sum,
    Product,
}

impl ProtocolKind {
    pub fn build(self, cfg: &ThresholdConfig) -> ProtocolProgram {
        match self {
            ProtocolKind::Sum => build_sum_program(cfg),
            ProtocolKind::Product => build_product_program(cfg),
        }
    }
}

impl FromStr for ProtocolKind {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Self::Sum),
            "product" => Ok(Self::Product),
            other => Err(EngineError::InvalidProgram(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Close, `n - 1` local additions, open: two communication rounds.
pub fn build_sum_program(cfg: &ThresholdConfig) -> ProtocolProgram {
    let n = cfg.parties();
    let mut steps = vec![Step::Close];
    steps.extend((1..n).map(|operand| Step::AddLocal { operand }));
    steps.push(Step::Open);
    ProtocolProgram::new(steps, cfg).expect("sum program is well formed")
}

/// Close, `n - 1` multiplication rounds (left fold), open: `n + 1` rounds.
pub fn build_product_program(cfg: &ThresholdConfig) -> ProtocolProgram {
    let n = cfg.parties();
    let mut steps = vec![Step::Close];
    steps.extend((1..n).map(|operand| Step::MulRound { operand }));
    steps.push(Step::Open);
    ProtocolProgram::new(steps, cfg).expect("product program is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::PrimeModulus;

    fn cfg(n: usize) -> ThresholdConfig {
        ThresholdConfig::with_default_threshold(n).unwrap()
    }

    #[test]
    fn sum_program_shape() {
        let p = build_sum_program(&cfg(3));
        assert_eq!(p.communication_rounds(), 2);
        assert_eq!(p.total_messages(), 12);
        assert_eq!(p.len(), 4);
        assert_eq!(build_sum_program(&cfg(5)).total_messages(), 40);
        for n in 3..=15 {
            assert_eq!(build_sum_program(&cfg(n)).communication_rounds(), 2);
        }
    }

    #[test]
    fn product_program_shape() {
        assert_eq!(build_product_program(&cfg(3)).communication_rounds(), 4);
        assert_eq!(build_product_program(&cfg(4)).total_messages(), 60);
        for n in 3..=9 {
            assert_eq!(build_product_program(&cfg(n)).communication_rounds(), n + 1);
        }
    }

    #[test]
    fn plaintext_evaluation() {
        let f = PrimeModulus::new_unchecked(97);
        let inputs = [f.element(2), f.element(3), f.element(4)];
        assert_eq!(build_product_program(&cfg(3)).evaluate_plaintext(&inputs).value(), 24);
        assert_eq!(build_sum_program(&cfg(3)).evaluate_plaintext(&inputs).value(), 9);
    }

    #[test]
    fn plan_round_trip() {
        let c = cfg(4);
        let plan = "# mixed\nclose\nadd\n\nmul  # reshare\nadd\nopen\n";
        let p = ProtocolProgram::parse_plan(plan, &c).unwrap();
        assert_eq!(
            p.steps(),
            &[
                Step::Close,
                Step::AddLocal { operand: 1 },
                Step::MulRound { operand: 2 },
                Step::AddLocal { operand: 3 },
                Step::Open
            ]
        );
        assert_eq!(ProtocolProgram::parse_plan(&p.to_plan(), &c).unwrap(), p);
        assert_eq!(ProtocolProgram::parse_plan(&build_sum_program(&c).to_plan(), &c).unwrap(), build_sum_program(&c));
    }

    #[test]
    fn malformed_plans() {
        let c = cfg(3);
        for bad in ["add\nopen", "close\nadd", "close\nopen\nopen", "close\nadd\nadd\nadd\nopen", "close\nfoo\nopen", "close\nclose\nopen"] {
            assert!(ProtocolProgram::parse_plan(bad, &c).is_err(), "{bad:?}");
        }
        assert!(ProtocolProgram::parse_plan("close\nopen", &c).is_ok());
    }
}
