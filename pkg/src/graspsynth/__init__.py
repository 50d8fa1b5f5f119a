"""graspsynth: functional grasp synthesis and evaluation for articulated hands.

The typical flow: extract a contact bundle from a demonstration
(`contact.extract_bundle`), transport it to another instance of the
category (`correspondence`), map the human grasp onto a robot hand
(`retarget`), optimize and refine (`grasp_opt`), and score (`metrics`).
`fixtures` provides synthetic desk-scale categories and demonstrations;
`pipeline.run_category` wires the whole loop with manifests.
"""

from . import (contact, correspondence, fit, fixtures, geometry, grasp_opt,
               hands, metrics, pipeline, retarget)
from .errors import (ConfigurationError, GraspSynthError, InvalidInputError,
                     SchemaError, UnrecognizedObjectError)

__version__ = "0.1.0"

__all__ = [
    "contact", "correspondence", "fit", "fixtures", "geometry", "grasp_opt",
    "hands", "metrics", "pipeline", "retarget",
    "ConfigurationError", "GraspSynthError", "InvalidInputError",
    "SchemaError", "UnrecognizedObjectError",
]
