"""moldassist: injection-molding knowledge assistant.

Multi-agent chat over a troubleshooting table and a machine manual, with a
generative recommender for numeric process conditions.
"""

__version__ = "0.1.0"
