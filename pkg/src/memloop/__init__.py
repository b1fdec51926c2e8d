"""Long-context reading with a fixed-size, overwritten memory."""
from .cost import ModelShape, compare, flops_dense
from .dapo import DapoConfig, compute_advantages, dapo_objective
from .gateway import EndpointConfig, HttpGateway, MockGateway, make_mock
from .tasks import TaskInstance, generate
from .tokens import TokenCounter
from .verifiers import AnswerSet, score
from .workflow import Budgets, chunk_document, run_episode

__version__ = "0.1.0"
