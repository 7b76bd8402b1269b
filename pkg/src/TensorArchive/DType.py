# automatically generated by the FlatBuffers compiler, do not modify

# namespace: TensorArchive

class DType(object):
    Float32 = 0
    Float64 = 1
    Int64 = 2
    UInt8 = 3
