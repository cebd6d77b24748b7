from .integrate import (IntegrationError, TrajectoryRecord, apply_step_guard,
                        formulation_gap, integrate)
from .scenario import (Disturbance, Reference, Scenario, ScenarioError, apply_overrides,
                       load_scenario, save_scenario, scenario_from_dict, scenario_to_dict)

__all__ = [
    "Disturbance", "IntegrationError", "Reference", "Scenario", "ScenarioError",
    "TrajectoryRecord", "apply_overrides", "apply_step_guard", "formulation_gap",
    "integrate", "load_scenario", "save_scenario", "scenario_from_dict", "scenario_to_dict",
]
