# Pipeline modules: skeleton transforms, datasets, autodiff models and evaluation
