# Independent FK oracle: mpmath 50-digit chain product, modified DH (Craig).
import mpmath as mp
mp.mp.dps = 50

PARAMS = [  # (a, d, alpha) for joints 1..7, Panda-like
    (0.0,     0.333, 0.0),
    (0.0,     0.0,  -mp.pi/2),
    (0.0,     0.316, mp.pi/2),
    (0.0825,  0.0,   mp.pi/2),
    (-0.0825, 0.384, -mp.pi/2),
    (0.0,     0.0,   mp.pi/2),
    (0.088,   0.0,   mp.pi/2),
]
EE_D = mp.mpf("0.107")

def mdh(a, d, alpha, theta):
    ct, st = mp.cos(theta), mp.sin(theta)
    ca, sa = mp.cos(alpha), mp.sin(alpha)
    return mp.matrix([
        [ct, -st, 0, a],
        [st*ca, ct*ca, -sa, -d*sa],
        [st*sa, ct*sa, ca, d*ca],
        [0, 0, 0, 1]])

def fk(q):
    T = mp.eye(4)
    for (a, d, al), th in zip(PARAMS, q):
        T = T * mdh(a, d, al, th)
    T = T * mdh(0, EE_D, 0, 0)
    return T

def quat_wxyz(T):
    # rotation matrix -> quaternion, Shepperd
    R = T[0:3, 0:3]
    tr = R[0,0]+R[1,1]+R[2,2]
    if tr > 0:
        w = mp.sqrt(1+tr)/2
        x = (R[2,1]-R[1,2])/(4*w); y = (R[0,2]-R[2,0])/(4*w); z = (R[1,0]-R[0,1])/(4*w)
    else:
        i = max(range(3), key=lambda k: R[k,k])
        if i == 0:
            s = mp.sqrt(1+R[0,0]-R[1,1]-R[2,2])*2
            w=(R[2,1]-R[1,2])/s; x=s/4; y=(R[0,1]+R[1,0])/s; z=(R[0,2]+R[2,0])/s
        elif i == 1:
            s = mp.sqrt(1+R[1,1]-R[0,0]-R[2,2])*2
            w=(R[0,2]-R[2,0])/s; x=(R[0,1]+R[1,0])/s; y=s/4; z=(R[1,2]+R[2,1])/s
        else:
            s = mp.sqrt(1+R[2,2]-R[0,0]-R[1,1])*2
            w=(R[1,0]-R[0,1])/s; x=(R[0,2]+R[2,0])/s; y=(R[1,2]+R[2,1])/s; z=s/4
    if w < 0:
        w, x, y, z = -w, -x, -y, -z
    return (w, x, y, z)

for name, q in [("zero", [0]*7), ("bent", [0.1, -0.4, 0.3, -1.2, 0.5, 1.1, -0.7])]:
    T = fk([mp.mpf(str(v)) for v in q])
    p = [T[i,3] for i in range(3)]
    quat = quat_wxyz(T)
    print(name, "pos:", [mp.nstr(v, 17) for v in p])
    print(name, "quat wxyz:", [mp.nstr(v, 17) for v in quat])
