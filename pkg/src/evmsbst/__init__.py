"""Search-based branch-coverage test generation for EVM contract bytecode."""
from .artifact import ContractArtifact, load_artifact, load_fixture
from .cdg import Branch, Cdg, build_cdg
from .cfg import build_cfg
from .fitness import Archive, evaluate_test_case
from .provider import EmbeddedProvider, RemoteProvider
from .search import ENGINES, RunReport, RunResult, run_dynamosa, run_fuzzer
from .testgen import GenConfig, TestCase, load_config

__version__ = "0.1.0"

__all__ = [
    "Archive", "Branch", "Cdg", "ContractArtifact", "ENGINES", "EmbeddedProvider", "GenConfig",
    "RemoteProvider", "RunReport", "RunResult", "TestCase", "build_cdg", "build_cfg",
    "evaluate_test_case", "load_artifact", "load_config", "load_fixture", "run_dynamosa",
    "run_fuzzer",
]
