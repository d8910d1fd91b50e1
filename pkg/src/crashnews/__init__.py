"""Harvest road-accident news, structure it with chat LLMs, and score the result.

The pipeline has three stages, each usable on its own:

* :mod:`crashnews.harvest` builds a news index from newspaper listing pages and
  downloads article bodies (robots.txt aware, see :mod:`crashnews.netfetch`).
* :mod:`crashnews.chains` triages each article as ``Specific`` or ``General``
  and extracts eight accident fields from the specific ones.
* :mod:`crashnews.evalkit` compares generated datasets against hand-annotated
  gold standards and reports field-level accuracy.
"""

__version__ = "0.1.0"
