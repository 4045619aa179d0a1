"""This module initializes the shared singletons used by the commands.
Each singleton is bound to the application instance in the application
factory method :func:`register_extensions`.

.. note:: Do not define any functions in this module. This module
    should only initialize the extensions required by the application.
"""
from src.services.llm import ExchangeRecorder, TokenBucket

#: The token bucket throttles live LLM requests to ``LLM_RPS`` requests
#: per second across every worker thread of a run.
limiter = TokenBucket()

#: The exchange recorder appends every LLM exchange to the JSONL file
#: named by ``LLM_RECORD`` or the ``--record`` option. Recordings are
#: replayed by the replay transport.
recorder = ExchangeRecorder()
