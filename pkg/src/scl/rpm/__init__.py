from .dataset import Dataset, DatasetFormatError, read_dataset, write_dataset
from .generate import (GenerationError, check_candidates, derive_seed,
                       frequency_audit, generate_problem, generate_problems,
                       make_distractors)
from .render import fill_intensity, render_panel, render_problem, shape_radius
from .rules import (ConstraintError, HeldoutFilter, relation_holds,
                    relation_kinds, sample_rules)
from .types import (DOMAIN_SIZE, Assignment, Attribute, Layout, ProblemSpec,
                    Relation, RuleSpec, domain, domain_max)

__all__ = [
    "Attribute", "Relation", "RuleSpec", "Layout", "ProblemSpec", "Assignment",
    "DOMAIN_SIZE", "domain", "domain_max",
    "relation_holds", "relation_kinds", "sample_rules", "HeldoutFilter",
    "ConstraintError", "GenerationError",
    "generate_problem", "generate_problems", "make_distractors",
    "check_candidates", "derive_seed", "frequency_audit",
    "render_panel", "render_problem", "shape_radius", "fill_intensity",
    "Dataset", "read_dataset", "write_dataset", "DatasetFormatError",
]
