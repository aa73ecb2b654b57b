from . import types
from . import errors
from . import domain
from . import clustering
from . import transform
from . import evaluator
from . import ga
from . import exact
from . import harness
from . import db
from . import cli

from .globals import *
