"""This package defines the domain data types shared by the planning
pipeline: the task graph, plans and samples, LLM exchanges and scorer
weights.
"""
from src.models.exchange import DecodingParams, LlmExchange, Transport, Usage
from src.models.gnn import Arch, GnnModel
from src.models.graph import (
    LinkKind,
    TaskEdge,
    TaskGraph,
    TaskNode,
    load_graph,
    save_graph,
)
from src.models.plan import Argument, Plan, PlanSample
