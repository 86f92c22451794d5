"""HAB-assisted mobile edge computing.

Channel and energy models (``netmodel``), per-HAB task scheduling
(``scheduler``), federated multi-task SVM association learning
(``fedsvm``), brute-force references (``oracle``), scenario and traffic
generation (``scenario``) and the experiment harness (``harness``).
"""
from . import fedsvm, netmodel, oracle, scenario, scheduler
from .config import Config, load_config
from .scenario import generate_scenario, synth_traffic

__version__ = "0.1.0"

__all__ = ["Config", "fedsvm", "generate_scenario", "load_config", "netmodel", "oracle",
           "scenario", "scheduler", "synth_traffic"]
