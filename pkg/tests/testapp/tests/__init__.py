from .test_neural import *
from .test_data import *
from .test_synthetic import *
from .test_encoders import *
from .test_recommenders import *
from .test_evaluation import *
from .test_experiment import *
from .test_reproduction import *
