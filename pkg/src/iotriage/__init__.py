"""IoT/IIoT attack triage pipeline.

Detection (flow classifiers), knowledge retrieval, prompt construction,
LLM gateway with record/replay, and multi-judge rubric scoring.
"""

__version__ = "0.1.0"
